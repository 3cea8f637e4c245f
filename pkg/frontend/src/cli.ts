/** @file Process plumbing: every binding marshals through the CLI binary. */

import { spawnSync } from 'node:child_process';

/** Options shared by all bindings that invoke the CLI. */
export interface CliOptions {
  /** Executable to run; defaults to $QRELKIT_BIN, then "qrelkit" on PATH. */
  bin?: string;
  /** Build-cache directory, forwarded as --cache-dir. */
  cacheDir?: string;
  /** Global seed, forwarded as --seed. */
  seed?: number;
}

/** A CLI invocation that exited non-zero, with its stderr preserved. */
export class CliError extends Error {
  readonly exitCode: number;
  readonly stderr: string;

  constructor(command: string, exitCode: number, stderr: string) {
    super(`${command} exited with code ${exitCode}: ${stderr.trim()}`);
    this.name = 'CliError';
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

/**
 * Runs one CLI command synchronously and returns its stdout.
 *
 * Global flags from {@link CliOptions} are inserted before the
 * subcommand. Non-zero exits become {@link CliError} carrying the
 * core's own error text.
 */
export function runCli(args: string[], opts: CliOptions = {}): string {
  const bin = opts.bin ?? process.env.QRELKIT_BIN ?? 'qrelkit';
  const globals: string[] = [];
  if (opts.cacheDir !== undefined) {
    globals.push('--cache-dir', opts.cacheDir);
  }
  if (opts.seed !== undefined) {
    globals.push('--seed', String(opts.seed));
  }
  const full = [...globals, ...args];
  const result = spawnSync(bin, full, {
    encoding: 'utf8',
    maxBuffer: 1 << 28,
  });
  if (result.error) {
    throw result.error;
  }
  if (result.status !== 0) {
    throw new CliError(
      [bin, ...full].join(' '),
      result.status ?? -1,
      result.stderr ?? '',
    );
  }
  return result.stdout;
}
