/** @file Readers and writers for the toolkit's text and binary formats. */

import { readFileSync } from 'node:fs';

/** One line of a TREC run file: "qid Q0 docid rank score tag". */
export interface RunEntry {
  queryId: string;
  docId: string;
  rank: number;
  score: number;
  tag: string;
}

/** One graded judgment, as stored in a qrels TSV line. */
export interface QrelTriple {
  queryId: string;
  docId: string;
  score: number;
}

/** Parses a TREC run file into per-query entries sorted by rank. */
export function readTrecRun(path: string): Map<string, RunEntry[]> {
  const run = new Map<string, RunEntry[]>();
  for (const line of readLines(path)) {
    const fields = line.split(/\s+/);
    if (fields.length !== 6) {
      throw new Error(`bad run line (expected 6 fields): ${line}`);
    }
    const entry: RunEntry = {
      queryId: fields[0],
      docId: fields[2],
      rank: Number(fields[3]),
      score: Number(fields[4]),
      tag: fields[5],
    };
    if (!Number.isInteger(entry.rank) || Number.isNaN(entry.score)) {
      throw new Error(`bad rank or score: ${line}`);
    }
    const entries = run.get(entry.queryId) ?? [];
    entries.push(entry);
    run.set(entry.queryId, entries);
  }
  for (const entries of run.values()) {
    entries.sort((a, b) => a.rank - b.rank);
  }
  return run;
}

/** Parses a qrels TSV (query, doc, integer score per line). */
export function readQrelsTsv(path: string): QrelTriple[] {
  const triples: QrelTriple[] = [];
  for (const line of readLines(path)) {
    const fields = line.split('\t');
    if (fields.length !== 3) {
      throw new Error(`bad qrels line (expected 3 tab-separated fields): ${line}`);
    }
    const score = Number(fields[2]);
    if (!Number.isInteger(score)) {
      throw new Error(`score is not an integer: ${line}`);
    }
    triples.push({ queryId: fields[0], docId: fields[1], score });
  }
  return triples;
}

/**
 * Serializes vectors as the raw little-endian float32 payload the
 * cache importer expects, independent of host byte order.
 */
export function vectorsToBytes(vectors: Float32Array): Buffer {
  const buf = Buffer.alloc(vectors.length * Float32Array.BYTES_PER_ELEMENT);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  for (let i = 0; i < vectors.length; i++) {
    view.setFloat32(i * Float32Array.BYTES_PER_ELEMENT, vectors[i], true);
  }
  return buf;
}

function readLines(path: string): string[] {
  const text = readFileSync(path, 'utf8');
  const lines = text.split('\n');
  if (lines.length > 0 && lines[lines.length - 1] === '') {
    lines.pop();
  }
  return lines;
}
