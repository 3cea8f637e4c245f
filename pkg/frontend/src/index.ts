export { CliError, runCli } from './cli';
export type { CliOptions } from './cli';
export {
  BoundDataset,
  openBinaryDataset,
  openDataset,
} from './dataset';
export type {
  BinaryExample,
  CollectionMapping,
  DatasetMapping,
  LabeledDoc,
  MultiLevelExample,
  OpenDatasetOptions,
} from './dataset';
export { cacheVectors, evaluate, mine } from './evaluator';
export type {
  EvaluateArgs,
  EvaluateResult,
  MetricReport,
  MineArgs,
  MineResult,
} from './evaluator';
export { readQrelsTsv, readTrecRun, vectorsToBytes } from './formats';
export type { QrelTriple, RunEntry } from './formats';
