import { readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import {
  CliError,
  DatasetMapping,
  openBinaryDataset,
  openDataset,
  runCli,
} from '../src/index';
import { FIXTURES, tempCacheDir, tempWorkDir } from './helpers';

function walkthroughMapping(): DatasetMapping {
  return JSON.parse(
    readFileSync(join(FIXTURES, 'walkthrough_spec.json'), 'utf8'),
  ) as DatasetMapping;
}

describe('openDataset', () => {
  it('matches the CLI export byte-for-byte on the bundled walkthrough', () => {
    const cacheDir = tempCacheDir();
    const ds = openDataset(walkthroughMapping(), { baseDir: FIXTURES, cacheDir });

    const work = tempWorkDir();
    const cliOut = join(work, 'cli.jsonl');
    runCli(
      ['export', '--spec', join(FIXTURES, 'walkthrough_spec.json'), '--out', cliOut],
      { cacheDir },
    );
    const cliText = readFileSync(cliOut, 'utf8');
    const cliLines = cliText.split('\n').filter((line) => line !== '');

    expect(ds.length).toBe(cliLines.length);
    for (let i = 0; i < ds.length; i++) {
      expect(ds.raw(i)).toBe(cliLines[i]);
      expect(ds.get(i)).toEqual(JSON.parse(cliLines[i]));
    }

    const golden = readFileSync(
      join(FIXTURES, 'golden', 'export_walkthrough.jsonl'),
      'utf8',
    );
    expect(cliText).toBe(golden);
  });

  it('reports length and items for a small hand-built dataset', () => {
    const work = tempWorkDir();
    writeFileSync(
      join(work, 'queries.jsonl'),
      '{"_id": "qa", "text": "first query"}\n{"_id": "qb", "text": "second query"}\n',
    );
    writeFileSync(
      join(work, 'corpus.jsonl'),
      '{"_id": "d1", "text": "one"}\n{"_id": "d2", "text": "two"}\n{"_id": "d3", "text": "three"}\n',
    );
    writeFileSync(join(work, 'qrels.tsv'), 'qa\td1\t2\nqa\td2\t0\nqb\td3\t1\n');
    const ds = openDataset(
      {
        query_path: 'queries.jsonl',
        corpus_path: 'corpus.jsonl',
        collections: [{ qrel_path: 'qrels.tsv' }],
      },
      { baseDir: work, cacheDir: tempCacheDir() },
    );
    expect(ds.length).toBe(2);
    const first = ds.get(0);
    expect(first.query_id).toBe('qa');
    expect(first.docs.map((d) => [d.doc_id, d.label])).toEqual([
      ['d1', 2],
      ['d2', 0],
    ]);
    expect([...ds].map((ex) => ex.query_id)).toEqual(['qa', 'qb']);
  });

  it('yields positive/negatives pairs in binary mode, matching the CLI', () => {
    const cacheDir = tempCacheDir();
    const ds = openBinaryDataset(walkthroughMapping(), { baseDir: FIXTURES, cacheDir });

    const work = tempWorkDir();
    const cliOut = join(work, 'cli.jsonl');
    runCli(
      [
        'export',
        '--spec', join(FIXTURES, 'walkthrough_spec.json'),
        '--binary',
        '--out', cliOut,
      ],
      { cacheDir },
    );
    const cliLines = readFileSync(cliOut, 'utf8').split('\n').filter((l) => l !== '');

    expect(ds.length).toBe(cliLines.length);
    expect(ds.length).toBeGreaterThan(0);
    for (let i = 0; i < ds.length; i++) {
      expect(ds.raw(i)).toBe(cliLines[i]);
      const ex = ds.get(i);
      expect(Object.keys(ex).sort()).toEqual([
        'negatives', 'positive', 'query', 'query_id', 'short',
      ]);
      expect(ex.negatives.length).toBeLessThanOrEqual(2);
    }
  });

  it('surfaces the core error text for a missing qrel file', () => {
    expect(() =>
      openDataset(
        {
          query_path: 'queries.jsonl',
          corpus_path: 'corpus.jsonl',
          collections: [{ qrel_path: 'no-such-dir/missing.tsv' }],
        },
        { baseDir: FIXTURES, cacheDir: tempCacheDir() },
      ),
    ).toThrow(/file not found/);
  });

  it('rejects out-of-range indexes', () => {
    const ds = openDataset(walkthroughMapping(), {
      baseDir: FIXTURES,
      cacheDir: tempCacheDir(),
    });
    expect(() => ds.raw(ds.length)).toThrow(RangeError);
    expect(() => ds.raw(-1)).toThrow(RangeError);
  });

  it('wraps non-zero exits in CliError with the exit code', () => {
    try {
      runCli(['export', '--spec', 'absent.json', '--out', 'x.jsonl'], {
        cacheDir: tempCacheDir(),
      });
      expect.unreachable('export of an absent spec must fail');
    } catch (err) {
      expect(err).toBeInstanceOf(CliError);
      expect((err as CliError).exitCode).toBe(2);
    }
  });
});
