import { writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { cacheVectors, readTrecRun, runCli } from '../src/index';
import { tempCacheDir, tempWorkDir } from './helpers';

/**
 * The retrieval score for one pair: float64 accumulation over float32
 * inputs, rounded to float32 once at the end.
 */
function expectedScore(q: number[], d: number[]): number {
  let acc = 0;
  for (let i = 0; i < q.length; i++) {
    acc += Math.fround(q[i]) * Math.fround(d[i]);
  }
  return Math.fround(acc);
}

describe('cacheVectors', () => {
  it('feeds retrieval with bit-equal scores', () => {
    // every component is a multiple of 1/64, so scores are exact both
    // in float32 and in the run file's six-decimal rendering
    const queries: Record<string, number[]> = {
      q1: [1, 0, 0, 0],
      q2: [0.5, 0.5, 0, 0],
    };
    const docs: Record<string, number[]> = {
      dA: [0.25, 0.125, 0, 0],
      dB: [0.875, 0.25, 0, 0],
      dC: [-0.5, 1, 0, 0],
    };

    const work = tempWorkDir();
    writeFileSync(
      join(work, 'queries.jsonl'),
      Object.keys(queries)
        .map((id) => `{"_id": "${id}", "text": "placeholder"}\n`)
        .join(''),
    );
    writeFileSync(
      join(work, 'corpus.jsonl'),
      Object.keys(docs)
        .map((id) => `{"_id": "${id}", "text": "placeholder"}\n`)
        .join(''),
    );

    const cacheDir = tempCacheDir();
    const queryCache = join(work, 'queries.qkec');
    const corpusCache = join(work, 'corpus.qkec');
    cacheVectors(
      Object.keys(queries),
      Float32Array.from(Object.values(queries).flat()),
      4,
      queryCache,
      { cacheDir },
    );
    cacheVectors(
      Object.keys(docs),
      Float32Array.from(Object.values(docs).flat()),
      4,
      corpusCache,
      { cacheDir },
    );

    const runPath = join(work, 'run.trec');
    runCli(
      [
        'retrieve',
        '--queries', join(work, 'queries.jsonl'),
        '--corpus', join(work, 'corpus.jsonl'),
        '--topk', '3',
        '--dim', '4',
        '--query-cache', queryCache,
        '--corpus-cache', corpusCache,
        '--out', runPath,
      ],
      { cacheDir },
    );

    const run = readTrecRun(runPath);
    expect([...run.keys()].sort()).toEqual(['q1', 'q2']);
    expect(run.get('q1')!.map((e) => e.docId)).toEqual(['dB', 'dA', 'dC']);
    expect(run.get('q2')!.map((e) => e.docId)).toEqual(['dB', 'dC', 'dA']);
    for (const [qid, entries] of run) {
      for (const entry of entries) {
        expect(entry.score).toBe(expectedScore(queries[qid], docs[entry.docId]));
      }
    }
  });

  it('rejects mismatched dimensions before calling the importer', () => {
    expect(() =>
      cacheVectors(['a', 'b'], new Float32Array(6), 4, join(tempWorkDir(), 'x.qkec')),
    ).toThrow(/dim mismatch/);
  });
});
