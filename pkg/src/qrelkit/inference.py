"""Brute-force dense retrieval over weighted corpus shards, plus mining.

The corpus is split into contiguous ranges sized by largest-remainder
apportionment of per-worker throughput weights.  Each worker scores its
range against all queries in fixed-size batches into a private top-k
state; states are merged after the fact.  Scoring is an exact function of
(query, document), and the tracker keeps the exact best k under the
(score desc, doc id asc) order, so the merged result is identical for
every plan over the same items.

Runs serialize to the six-column TREC format.  Hard negatives are the
highest-ranked retrieved documents not annotated relevant, re-emitted as
qrel triples so they load back through the normal collection path.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingCache, EncoderSpec, encode_record, similarity
from .errors import ConfigError, FormatError, MissingRecordError
from .qrels import QrelTriple, labels_for
from .store import StoreHandle, atomic_write
from .topk import (
    ScoredDoc,
    TopKState,
    WatchList,
    topk_finalize,
    topk_merge,
    topk_new,
    topk_update,
    watch_update,
)

RunResult = dict[bytes, list[ScoredDoc]]

DEFAULT_BATCH_SIZE = 4096


@dataclass(frozen=True)
class ShardPlan:
    """Contiguous per-worker ranges covering [0, total) exactly once."""

    total: int
    assignments: tuple[tuple[int, int, int], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        expected_start = 0
        for worker, start, length in self.assignments:
            if start != expected_start or length < 0:
                raise ConfigError("shard ranges must be contiguous and ordered")
            expected_start += length
        if expected_start != self.total:
            raise ConfigError(
                f"shard lengths sum to {expected_start}, expected {self.total}"
            )


def plan_shards(n: int, weights: Sequence[float]) -> ShardPlan:
    """Split ``n`` items proportionally to weights, largest remainder first.

    Remainder ties go to the lower worker index; with equal weights the
    range sizes differ by at most one.
    """
    if n < 0:
        raise ConfigError(f"item count must be >= 0, got {n}")
    if not weights:
        raise ConfigError("at least one worker weight required")
    ws = [float(w) for w in weights]
    for i, w in enumerate(ws):
        if not math.isfinite(w) or w <= 0:
            raise ConfigError(f"worker {i} weight must be positive, got {w}")
    total_w = sum(ws)
    quotas = [n * w / total_w for w in ws]
    lengths = [int(q) for q in quotas]
    remainder = n - sum(lengths)
    by_fraction = sorted(range(len(ws)), key=lambda i: (-(quotas[i] - lengths[i]), i))
    for i in by_fraction[:remainder]:
        lengths[i] += 1
    assignments = []
    start = 0
    for worker, length in enumerate(lengths):
        assignments.append((worker, start, length))
        start += length
    return ShardPlan(total=n, assignments=tuple(assignments), weights=tuple(ws))


def _resolve_vector(
    record_id: bytes,
    store: StoreHandle,
    cache: EmbeddingCache | None,
    spec: EncoderSpec,
    side: str,
) -> np.ndarray:
    if cache is not None:
        vec = cache.get_optional(record_id)
        if vec is not None:
            return vec
    rec = store.get_optional(record_id)
    if rec is None:
        raise MissingRecordError(side, record_id)
    return encode_record(spec, rec)


def _check_cache_dim(cache: EmbeddingCache | None, spec: EncoderSpec, side: str) -> None:
    if cache is not None and cache.dim != spec.dim:
        raise ConfigError(
            f"{side} cache dim {cache.dim} does not match encoder dim {spec.dim}"
        )


def retrieve(
    query_store: StoreHandle,
    corpus_store: StoreHandle,
    encoder_spec: EncoderSpec,
    k: int,
    query_ids: Sequence[bytes] | None = None,
    corpus_ids: Sequence[bytes] | None = None,
    query_cache: EmbeddingCache | None = None,
    corpus_cache: EmbeddingCache | None = None,
    plan: ShardPlan | None = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    watch: WatchList | None = None,
) -> RunResult:
    """Top-k documents per query by dot product, exact and plan-independent.

    Queries are encoded once upfront (cache first, then raw text).  Workers
    run as threads, one per plan assignment, each folding its corpus range
    into a private tracker; the merged result equals the single-worker run
    bit for bit.  A watch list, if given, records scores of chosen
    (query, doc) pairs as they stream by.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    _check_cache_dim(query_cache, encoder_spec, "query")
    _check_cache_dim(corpus_cache, encoder_spec, "corpus")
    qids = list(query_ids) if query_ids is not None else query_store.ids()
    dids = list(corpus_ids) if corpus_ids is not None else corpus_store.ids()
    if plan is None:
        plan = plan_shards(len(dids), [1.0])
    if plan.total != len(dids):
        raise ConfigError(
            f"plan covers {plan.total} items but corpus has {len(dids)}"
        )

    query_matrix = np.empty((len(qids), encoder_spec.dim), dtype=np.float32)
    for row, qid in enumerate(qids):
        query_matrix[row] = _resolve_vector(
            qid, query_store, query_cache, encoder_spec, "query"
        )

    def scan_range(start: int, length: int) -> TopKState:
        state = topk_new(qids, k)
        for lo in range(start, start + length, batch_size):
            hi = min(lo + batch_size, start + length)
            batch_ids = dids[lo:hi]
            doc_matrix = np.empty((hi - lo, encoder_spec.dim), dtype=np.float32)
            for j, did in enumerate(batch_ids):
                doc_matrix[j] = _resolve_vector(
                    did, corpus_store, corpus_cache, encoder_spec, "corpus"
                )
            scores = np.empty((len(qids), hi - lo), dtype=np.float32)
            for row in range(len(qids)):
                scores[row] = similarity(query_matrix[row], doc_matrix)
            topk_update(state, batch_ids, scores)
            if watch is not None:
                watch_update(watch, qids, batch_ids, scores)
        return state

    work = [(start, length) for _, start, length in plan.assignments if length > 0]
    if not work:
        return topk_finalize(topk_new(qids, k))
    if len(work) == 1:
        states = [scan_range(*work[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(work)) as pool:
            states = list(pool.map(lambda rng: scan_range(*rng), work))
    merged = states[0]
    for state in states[1:]:
        merged = topk_merge(merged, state)
    return topk_finalize(merged)


# ---------------------------------------------------------------------------
# hard-negative mining


@dataclass(frozen=True)
class MiningConfig:
    """How deep to look and how many negatives to keep per query."""

    depth: int
    num_negatives: int
    negative_label: int = 0
    positive_threshold: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if not 1 <= self.num_negatives <= self.depth:
            raise ConfigError(
                f"num_negatives must be in [1, depth={self.depth}], "
                f"got {self.num_negatives}"
            )


@dataclass(frozen=True)
class MiningResult:
    triples: tuple[QrelTriple, ...]
    emitted_per_query: dict[bytes, int]

    def short_queries(self, requested: int) -> list[bytes]:
        return sorted(q for q, n in self.emitted_per_query.items() if n < requested)


def mine_hard_negatives(run: RunResult, positives, cfg: MiningConfig) -> MiningResult:
    """Top-ranked unannotated-or-low-scored docs per query, as qrel triples.

    Scans each ranked list top-down to ``depth``, skipping docs annotated at
    or above the positive threshold; the first ``num_negatives`` survivors
    are emitted with the configured negative label.  Queries missing from
    the annotations are mined against an empty positive set.
    """
    triples: list[QrelTriple] = []
    emitted: dict[bytes, int] = {}
    for qid in sorted(run):
        labels = labels_for(positives, qid)
        count = 0
        for doc in run[qid][: cfg.depth]:
            if count >= cfg.num_negatives:
                break
            annotated = labels.get(doc.doc_id)
            if annotated is not None and annotated >= cfg.positive_threshold:
                continue
            triples.append(
                QrelTriple(
                    query_id=qid, doc_id=doc.doc_id, score=cfg.negative_label
                )
            )
            count += 1
        emitted[qid] = count
    return MiningResult(triples=tuple(triples), emitted_per_query=emitted)


# ---------------------------------------------------------------------------
# TREC run files


def write_trec_run(run: RunResult, path: Path, tag: str = "qrelkit") -> int:
    """Serialize a run as "qid Q0 docid rank score tag" lines; returns them.

    Queries are written in ascending ID order with ranks from 1; scores are
    printed with six decimals.  The file appears atomically.
    """
    if not tag or any(ch.isspace() for ch in tag):
        raise ConfigError(f"run tag must be non-empty without whitespace: {tag!r}")
    lines = []
    for qid in sorted(run):
        for rank, doc in enumerate(run[qid], start=1):
            lines.append(
                f"{qid.decode('utf-8')} Q0 {doc.doc_id.decode('utf-8')} "
                f"{rank} {doc.score:.6f} {tag}\n"
            )
    atomic_write(Path(path), "".join(lines).encode("utf-8"))
    return len(lines)


def read_trec_run(path: Path) -> RunResult:
    """Parse a TREC run file back into ranked lists (scores as f32)."""
    path = Path(path)
    rows: dict[bytes, list[tuple[int, bytes, float]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(
                    f"expected 6 whitespace-separated fields, got {len(parts)}",
                    path,
                    lineno,
                )
            qid, _, did, rank_s, score_s, _ = parts
            try:
                rank = int(rank_s)
                score = float(np.float32(score_s))
            except ValueError as exc:
                raise FormatError(f"bad rank or score: {exc}", path, lineno) from exc
            rows.setdefault(qid.encode("utf-8"), []).append(
                (rank, did.encode("utf-8"), score)
            )
    result: RunResult = {}
    for qid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        result[qid] = [ScoredDoc(doc_id=d, score=s) for _, d, s in entries]
    return result
