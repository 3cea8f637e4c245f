/** @file Evaluation, hard-negative mining, and external-vector injection. */

import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { CliOptions, runCli } from './cli';
import { QrelTriple, readQrelsTsv, vectorsToBytes } from './formats';

/** Aggregate and accounting for one metric over one run. */
export interface MetricReport {
  aggregate: number;
  evaluated: number;
  skipped: number;
  per_query?: Record<string, number>;
}

export interface EvaluateArgs {
  /** Path to a TREC run file. */
  run: string;
  /** Path to a qrels file. */
  qrels: string;
  /** Metric names like "ndcg@10", "mrr@10", "recall@100". */
  metrics: string[];
  /** Qrels file format, "tsv" (default) or "trec". */
  qrelFormat?: 'tsv' | 'trec';
  /** Relevance threshold for mrr/recall. */
  threshold?: number;
  /** Include per-query values in the report. */
  perQuery?: boolean;
}

export interface EvaluateResult {
  /** Parsed report, one entry per requested metric. */
  report: Record<string, MetricReport>;
  /** The report file's exact contents, for byte-level comparison. */
  json: string;
}

/** Scores a run against judgments via the core `evaluate` command. */
export function evaluate(args: EvaluateArgs, opts: CliOptions = {}): EvaluateResult {
  return withWorkDir((work) => {
    const outPath = join(work, 'report.json');
    const cli = [
      'evaluate',
      '--run', args.run,
      '--qrels', args.qrels,
      '--metrics', args.metrics.join(','),
      '--out', outPath,
    ];
    if (args.qrelFormat !== undefined) {
      cli.push('--qrel-format', args.qrelFormat);
    }
    if (args.threshold !== undefined) {
      cli.push('--threshold', String(args.threshold));
    }
    if (args.perQuery) {
      cli.push('--per-query');
    }
    runCli(cli, opts);
    const json = readFileSync(outPath, 'utf8');
    return { report: JSON.parse(json) as Record<string, MetricReport>, json };
  });
}

export interface MineArgs {
  /** Path to a TREC run file to mine from. */
  run: string;
  /** Path to the qrels holding known positives. */
  qrels: string;
  /** How deep into each ranking to look. */
  depth: number;
  /** Negatives to emit per query. */
  num: number;
  qrelFormat?: 'tsv' | 'trec';
  /** Score assigned to mined negatives (default 0). */
  label?: number;
  /** Annotation level treated as positive (default 1). */
  threshold?: number;
}

export interface MineResult {
  /** Mined triples in the core's output order. */
  triples: QrelTriple[];
  /** The mined qrels file's exact contents. */
  tsv: string;
}

/** Mines hard negatives via the core `mine-negatives` command. */
export function mine(args: MineArgs, opts: CliOptions = {}): MineResult {
  return withWorkDir((work) => {
    const outPath = join(work, 'mined.tsv');
    const cli = [
      'mine-negatives',
      '--run', args.run,
      '--qrels', args.qrels,
      '--depth', String(args.depth),
      '--num', String(args.num),
      '--out', outPath,
    ];
    if (args.qrelFormat !== undefined) {
      cli.push('--qrel-format', args.qrelFormat);
    }
    if (args.label !== undefined) {
      cli.push('--label', String(args.label));
    }
    if (args.threshold !== undefined) {
      cli.push('--threshold', String(args.threshold));
    }
    runCli(cli, opts);
    return { triples: readQrelsTsv(outPath), tsv: readFileSync(outPath, 'utf8') };
  });
}

/**
 * Writes externally computed embeddings into a vector cache file.
 *
 * `vectors` must hold `ids.length * dim` float32 values, row-major.
 * The cache is built by the core importer, so retrieval consumes the
 * injected vectors exactly as given.
 */
export function cacheVectors(
  ids: string[],
  vectors: Float32Array,
  dim: number,
  outPath: string,
  opts: CliOptions = {},
): void {
  if (vectors.length !== ids.length * dim) {
    throw new Error(
      `dim mismatch: ${ids.length} ids at dim ${dim} need ` +
      `${ids.length * dim} values, got ${vectors.length}`,
    );
  }
  withWorkDir((work) => {
    const idsPath = join(work, 'ids.txt');
    const vecPath = join(work, 'vectors.f32');
    writeFileSync(idsPath, ids.map((id) => `${id}\n`).join(''));
    writeFileSync(vecPath, vectorsToBytes(vectors));
    runCli(
      [
        'cache-import',
        '--ids', idsPath,
        '--vectors', vecPath,
        '--dim', String(dim),
        '--out', outPath,
      ],
      opts,
    );
  });
}

function withWorkDir<T>(body: (work: string) => T): T {
  const work = mkdtempSync(join(tmpdir(), 'qrelkit-frontend-'));
  try {
    return body(work);
  } finally {
    rmSync(work, { recursive: true, force: true });
  }
}
