/** @file Dataset construction and iteration over exported examples. */

import { mkdtempSync, readFileSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { isAbsolute, join, resolve } from 'node:path';

import { CliOptions, runCli } from './cli';

/** One qrel collection of a dataset spec, mirroring the core JSON schema. */
export interface CollectionMapping {
  qrel_path: string;
  qrel_format?: string;
  query_path?: string;
  corpus_path?: string;
  query_subset_path?: string;
  min_score?: number;
  max_score?: number;
  score_transform?: number | string;
  group_random_k?: number;
  filter_fn?: string;
  seed_salt?: string;
}

/** A dataset spec mapping, mirroring the core JSON schema. */
export interface DatasetMapping {
  collections: CollectionMapping[];
  query_path?: string;
  corpus_path?: string;
  seed?: number;
  positive_threshold?: number;
  negatives_per_query?: number;
}

/** A labeled document inside a multi-level example. */
export interface LabeledDoc {
  doc_id: string;
  label: number;
  title: string | null;
  text: string;
}

/** One query with all merged (document, label) pairs. */
export interface MultiLevelExample {
  query_id: string;
  query: string;
  docs: LabeledDoc[];
}

/** One query with a positive and sampled negative texts. */
export interface BinaryExample {
  query_id: string;
  query: string;
  positive: string;
  negatives: string[];
  short: boolean;
}

export interface OpenDatasetOptions extends CliOptions {
  /** Directory that relative paths inside the mapping resolve against. */
  baseDir?: string;
  /** Emit positive/negatives pairs instead of labeled document lists. */
  binary?: boolean;
}

const PATH_KEYS = ['query_path', 'corpus_path', 'qrel_path', 'query_subset_path'] as const;

function absolutized(spec: DatasetMapping, baseDir: string): DatasetMapping {
  const fix = <T extends Record<string, unknown>>(obj: T): T => {
    const out: Record<string, unknown> = { ...obj };
    for (const key of PATH_KEYS) {
      const value = out[key];
      if (typeof value === 'string' && !isAbsolute(value)) {
        out[key] = resolve(baseDir, value);
      }
    }
    return out as T;
  };
  const copy = fix({ ...spec });
  copy.collections = spec.collections.map((c) => fix({ ...c }));
  return copy;
}

/**
 * Materialized examples of one dataset spec, indexable by position.
 *
 * Items are exactly the core's exported JSONL lines; `raw(i)` returns
 * the untouched line so byte-level comparisons stay possible.
 */
export class BoundDataset<E = MultiLevelExample> {
  private readonly lines: string[];

  constructor(lines: string[]) {
    this.lines = lines;
  }

  get length(): number {
    return this.lines.length;
  }

  /** The example at position `i`, parsed. */
  get(i: number): E {
    return JSON.parse(this.raw(i)) as E;
  }

  /** The exported JSONL line for position `i`, byte-for-byte. */
  raw(i: number): string {
    if (i < 0 || i >= this.lines.length) {
      throw new RangeError(`example index ${i} out of range [0, ${this.lines.length})`);
    }
    return this.lines[i];
  }

  [Symbol.iterator](): Iterator<E> {
    let i = 0;
    return {
      next: (): IteratorResult<E> =>
        i < this.lines.length
          ? { done: false, value: this.get(i++) }
          : { done: true, value: undefined },
    };
  }
}

/**
 * Builds a dataset from a spec mapping and loads every example.
 *
 * The mapping is written to a temp file and handed to the core
 * `export` command; relative paths are resolved against
 * `opts.baseDir` (default: the working directory) first, since the
 * temp file's own location is meaningless.
 */
export function openDataset(
  spec: DatasetMapping,
  opts: OpenDatasetOptions = {},
): BoundDataset<MultiLevelExample> {
  return openAs<MultiLevelExample>(spec, opts, false);
}

/** Same as {@link openDataset} but yields positive/negatives pairs. */
export function openBinaryDataset(
  spec: DatasetMapping,
  opts: OpenDatasetOptions = {},
): BoundDataset<BinaryExample> {
  return openAs<BinaryExample>(spec, opts, true);
}

function openAs<E>(
  spec: DatasetMapping,
  opts: OpenDatasetOptions,
  binary: boolean,
): BoundDataset<E> {
  const resolved = absolutized(spec, opts.baseDir ?? process.cwd());
  const work = mkdtempSync(join(tmpdir(), 'qrelkit-frontend-'));
  try {
    const specPath = join(work, 'spec.json');
    const outPath = join(work, 'examples.jsonl');
    writeFileSync(specPath, JSON.stringify(resolved));
    const args = ['export', '--spec', specPath, '--out', outPath];
    if (binary) {
      args.push('--binary');
    }
    runCli(args, opts);
    const text = readFileSync(outPath, 'utf8');
    const lines = text.split('\n');
    if (lines.length > 0 && lines[lines.length - 1] === '') {
      lines.pop();
    }
    return new BoundDataset<E>(lines);
  } finally {
    rmSync(work, { recursive: true, force: true });
  }
}
