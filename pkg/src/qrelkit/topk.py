"""Batched top-k tracking over streamed score matrices.

``TopKState`` keeps, for each query, the k best (doc id, score) pairs seen
so far under the ordering (score descending, doc id ascending).  Updates
take a whole Q x B score matrix: a vectorized mask against each row's
current k-th best score selects candidates first, and only rows with
candidates do any per-element work (a partial selection over at most
k + B entries).  No per-element heap operations ever touch the full
matrix; that is the entire point versus the per-element reference
implementation ``HeapTopK`` kept alongside for tests and benchmarks.

States are single-writer.  Parallel scoring uses one state per worker and
``topk_merge``, which is exact because a document's score does not depend
on which worker computed it.  A ``WatchList`` records scores for chosen
(query, doc) pairs even when they never rank in the top k.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DuplicateIdError, QrelkitError

_NEG_INF = np.float32(-np.inf)


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: bytes
    score: float


class TopKState:
    """Per-query bounded best-score tables; rows kept sorted."""

    def __init__(self, query_ids: Sequence[bytes], k: int):
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        self.query_ids = [bytes(q) for q in query_ids]
        if len(set(self.query_ids)) != len(self.query_ids):
            seen = set()
            for q in self.query_ids:
                if q in seen:
                    raise DuplicateIdError(q, context="top-k query list")
                seen.add(q)
        self.k = k
        q = len(self.query_ids)
        self.scores = np.full((q, k), _NEG_INF, dtype=np.float32)
        self.ids = np.full((q, k), b"", dtype="S1")
        self.fill = np.zeros(q, dtype=np.int64)
        self.thresholds = np.full(q, _NEG_INF, dtype=np.float32)

    @property
    def num_queries(self) -> int:
        return len(self.query_ids)

    def _grow_ids(self, itemsize: int) -> None:
        if itemsize > self.ids.dtype.itemsize:
            self.ids = self.ids.astype(f"S{itemsize}")

    def _set_row(self, row: int, ids: np.ndarray, scores: np.ndarray) -> None:
        n = len(ids)
        self._grow_ids(ids.dtype.itemsize)
        self.ids[row, :n] = ids
        self.ids[row, n:] = b""
        self.scores[row, :n] = scores
        self.scores[row, n:] = _NEG_INF
        self.fill[row] = n
        self.thresholds[row] = scores[n - 1] if n == self.k else _NEG_INF


def topk_new(query_ids: Sequence[bytes], k: int) -> TopKState:
    return TopKState(query_ids, k)


def _as_id_array(batch_doc_ids: Sequence[bytes]) -> np.ndarray:
    arr = np.asarray(batch_doc_ids, dtype=np.bytes_)
    if arr.ndim != 1:
        raise ConfigError("batch doc ids must be a flat sequence")
    if arr.size and bool((arr == b"").any()):
        raise ConfigError("batch contains an empty doc id")
    return arr


def _select_row(ids: np.ndarray, scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # Sort the (<= fill + B) candidates by score desc, id asc; keep k.
    order = np.lexsort((ids, -scores))[:k]
    return ids[order], scores[order]


def topk_update(
    state: TopKState, batch_doc_ids: Sequence[bytes], score_matrix: np.ndarray
) -> None:
    """Fold one scored batch into the state.

    Rejects the whole batch (state untouched) on shape mismatch, duplicate
    doc ids within the batch, or non-finite scores.
    """
    ids = _as_id_array(batch_doc_ids)
    scores = np.asarray(score_matrix, dtype=np.float32)
    q, b = state.num_queries, len(ids)
    if scores.shape != (q, b):
        raise ConfigError(f"score matrix shape {scores.shape}, expected {(q, b)}")
    if len(np.unique(ids)) != b:
        raise ConfigError("duplicate doc id within batch")
    if scores.size and not bool(np.isfinite(scores).all()):
        kind = "NaN" if bool(np.isnan(scores).any()) else "non-finite"
        raise ConfigError(f"batch rejected: {kind} score")
    if b == 0 or q == 0:
        return

    # Whole-matrix candidate mask before any per-row work.  >= (not >)
    # admits boundary ties: a doc scoring exactly the k-th best can still
    # displace it on the doc-id tie-break.
    mask = scores >= state.thresholds[:, None]
    for row in np.nonzero(mask.any(axis=1))[0]:
        picked = mask[row]
        fill = int(state.fill[row])
        cand_ids = np.concatenate([state.ids[row, :fill], ids[picked]])
        cand_scores = np.concatenate([state.scores[row, :fill], scores[row, picked]])
        state._set_row(row, *_select_row(cand_ids, cand_scores, state.k))


def topk_merge(a: TopKState, b: TopKState) -> TopKState:
    """Exact top-k of the union of two states over the same query list.

    A doc id present in both sides must carry bit-equal scores (scoring is
    deterministic per document); a mismatch raises.
    """
    if a.k != b.k:
        raise ConfigError(f"k mismatch: {a.k} vs {b.k}")
    if a.query_ids != b.query_ids:
        raise ConfigError("query id lists differ")
    out = TopKState(a.query_ids, a.k)
    for row in range(out.num_queries):
        fa, fb = int(a.fill[row]), int(b.fill[row])
        if fa + fb == 0:
            continue
        cand_ids = np.concatenate(
            [a.ids[row, :fa].astype(np.bytes_), b.ids[row, :fb].astype(np.bytes_)]
        )
        cand_scores = np.concatenate([a.scores[row, :fa], b.scores[row, :fb]])
        uniq, first, inverse = np.unique(cand_ids, return_index=True, return_inverse=True)
        if len(uniq) != len(cand_ids):
            recon = cand_scores[first][inverse]
            if not np.array_equal(recon, cand_scores):
                bad = cand_ids[np.nonzero(recon != cand_scores)[0][0]]
                raise QrelkitError(
                    f"merge: doc {bytes(bad)!r} has differing scores for query "
                    f"{out.query_ids[row]!r}"
                )
            cand_ids, cand_scores = uniq, cand_scores[first]
        out._set_row(row, *_select_row(cand_ids, cand_scores, out.k))
    return out


def topk_finalize(state: TopKState) -> dict[bytes, list[ScoredDoc]]:
    """Ranked lists per query (score desc, doc id asc).  Read-only."""
    result: dict[bytes, list[ScoredDoc]] = {}
    for row, qid in enumerate(state.query_ids):
        fill = int(state.fill[row])
        result[qid] = [
            ScoredDoc(doc_id=bytes(state.ids[row, j]), score=float(state.scores[row, j]))
            for j in range(fill)
        ]
    return result


# ---------------------------------------------------------------------------
# watch list


class WatchList:
    """Records the latest score of chosen (query, doc) pairs in any batch."""

    def __init__(self, pairs: Iterable[tuple[bytes, bytes]]):
        self.pairs = frozenset((bytes(q), bytes(d)) for q, d in pairs)
        self.recorded: dict[tuple[bytes, bytes], float] = {}
        self._docs_by_query: dict[bytes, list[bytes]] = {}
        for q, d in self.pairs:
            self._docs_by_query.setdefault(q, []).append(d)


def watch_update(
    watch: WatchList,
    query_ids: Sequence[bytes],
    batch_doc_ids: Sequence[bytes],
    score_matrix: np.ndarray,
) -> None:
    if not watch.pairs:
        return
    scores = np.asarray(score_matrix)
    doc_col = {bytes(d): j for j, d in enumerate(batch_doc_ids)}
    for row, qid in enumerate(query_ids):
        qid = bytes(qid)
        for did in watch._docs_by_query.get(qid, ()):
            col = doc_col.get(did)
            if col is not None:
                watch.recorded[(qid, did)] = float(np.float32(scores[row, col]))


# ---------------------------------------------------------------------------
# per-element reference implementation


class _RevBytes:
    """Inverts byte-string ordering so a min-heap evicts the max id on ties."""

    __slots__ = ("b",)

    def __init__(self, b: bytes):
        self.b = b

    def __lt__(self, other: "_RevBytes") -> bool:
        return self.b > other.b

    def __eq__(self, other) -> bool:
        return self.b == other.b


class HeapTopK:
    """Naive top-k via one ``heapq`` operation per scored element.

    Kept as the independent reference for correctness tests and as the
    baseline the batched engine is benchmarked against.  The heap root is
    the current worst entry under (score desc, doc id asc).
    """

    def __init__(self, query_ids: Sequence[bytes], k: int):
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        self.query_ids = [bytes(q) for q in query_ids]
        self.k = k
        self._heaps: list[list[tuple[float, _RevBytes]]] = [[] for _ in self.query_ids]

    def push(self, row: int, doc_id: bytes, score: float) -> None:
        heap = self._heaps[row]
        item = (score, _RevBytes(doc_id))
        if len(heap) < self.k:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            heapq.heapreplace(heap, item)

    def update(self, batch_doc_ids: Sequence[bytes], score_matrix) -> None:
        for row in range(len(self.query_ids)):
            scores = score_matrix[row]
            for j, doc_id in enumerate(batch_doc_ids):
                self.push(row, bytes(doc_id), float(scores[j]))

    def finalize(self) -> dict[bytes, list[ScoredDoc]]:
        result: dict[bytes, list[ScoredDoc]] = {}
        for qid, heap in zip(self.query_ids, self._heaps):
            ordered = sorted(heap, key=lambda it: (-it[0], it[1].b))
            result[qid] = [ScoredDoc(doc_id=r.b, score=float(s)) for s, r in ordered]
        return result
