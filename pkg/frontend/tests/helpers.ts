import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { dirname, join, resolve } from 'node:path';
import { fileURLToPath } from 'node:url';

/** The fixture corpus bundled with the core package's test suite. */
export const FIXTURES = resolve(
  dirname(fileURLToPath(import.meta.url)),
  '../../tests/fixtures',
);

/** A fresh build-cache directory for one test. */
export function tempCacheDir(): string {
  return mkdtempSync(join(tmpdir(), 'qrelkit-cache-'));
}

/** A fresh scratch directory for one test. */
export function tempWorkDir(): string {
  return mkdtempSync(join(tmpdir(), 'qrelkit-work-'));
}

// the env var would override every per-test --cache-dir
delete process.env.QRELKIT_CACHE_DIR;
