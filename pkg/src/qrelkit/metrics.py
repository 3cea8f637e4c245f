"""Graded ranking metrics over runs and grouped qrels.

All metrics share one contract: the evaluated universe is the union of the
run's queries and the qrel queries, a query is skipped (and counted) when
the metric is undefined for it, and the aggregate is the unweighted mean
over evaluated queries.  ``rerank_eval`` reuses the same functions on the
restricted ranking of a query's annotated documents only, which is the
cheap in-training approximation of the full-corpus numbers.

Conventions: nDCG uses exponential gain (2^rel - 1) with a log2(i + 1)
discount; unjudged documents count as relevance 0; negative labels
contribute zero gain so values stay in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ConfigError, QrelkitError
from .qrels import grouped_ids, labels_for
from .topk import ScoredDoc

RunResult = dict[bytes, list[ScoredDoc]]

_METRIC_NAMES = ("ndcg", "mrr", "recall")


@dataclass(frozen=True)
class MetricSpec:
    """One metric request: name, cutoff, and (for mrr/recall) a threshold."""

    name: str
    k: int
    relevance_threshold: int = 1

    def __post_init__(self):
        if self.name not in _METRIC_NAMES:
            raise ConfigError(
                f"unknown metric {self.name!r}; expected one of {_METRIC_NAMES}"
            )
        if self.k < 1:
            raise ConfigError(f"metric cutoff must be >= 1, got {self.k}")

    @classmethod
    def parse(cls, text: str, relevance_threshold: int = 1) -> "MetricSpec":
        """Parse "name@k" strings such as "ndcg@10"."""
        name, sep, cutoff = text.strip().lower().partition("@")
        if not sep:
            raise ConfigError(f"metric {text!r} is not of the form name@k")
        try:
            k = int(cutoff)
        except ValueError as exc:
            raise ConfigError(f"metric cutoff {cutoff!r} is not an integer") from exc
        return cls(name=name, k=k, relevance_threshold=relevance_threshold)

    def render(self) -> str:
        return f"{self.name}@{self.k}"


@dataclass(frozen=True)
class MetricReport:
    """Per-query values plus their mean and skip accounting."""

    per_query: dict[bytes, float]
    skipped_count: int

    @property
    def evaluated_count(self) -> int:
        return len(self.per_query)

    @property
    def aggregate(self) -> float:
        if not self.per_query:
            return 0.0
        return sum(self.per_query.values()) / len(self.per_query)

    def to_obj(self, include_per_query: bool = False) -> dict:
        obj = {
            "aggregate": self.aggregate,
            "evaluated": self.evaluated_count,
            "skipped": self.skipped_count,
        }
        if include_per_query:
            obj["per_query"] = {
                qid.decode("utf-8"): value
                for qid, value in sorted(self.per_query.items())
            }
        return obj


def _universe(run: RunResult, qrels) -> list[bytes]:
    return sorted(set(run) | set(grouped_ids(qrels)))


def _gain(rel: int) -> float:
    return float(2 ** rel - 1) if rel > 0 else 0.0


def ndcg_at_k(run: RunResult, qrels, k: int) -> MetricReport:
    """Normalized discounted cumulative gain at cutoff ``k``.

    Queries whose ideal gain is zero (nothing judged relevant) are skipped.
    """
    if k < 1:
        raise ConfigError(f"metric cutoff must be >= 1, got {k}")
    per_query: dict[bytes, float] = {}
    skipped = 0
    for qid in _universe(run, qrels):
        labels = labels_for(qrels, qid)
        ideal = sorted(labels.values(), reverse=True)[:k]
        idcg = sum(_gain(rel) / math.log2(i + 2) for i, rel in enumerate(ideal))
        if idcg == 0.0:
            skipped += 1
            continue
        dcg = sum(
            _gain(labels.get(doc.doc_id, 0)) / math.log2(i + 2)
            for i, doc in enumerate(run.get(qid, [])[:k])
        )
        per_query[qid] = dcg / idcg
    return MetricReport(per_query, skipped)


def mrr_at_k(run: RunResult, qrels, k: int, relevance_threshold: int = 1) -> MetricReport:
    """Reciprocal rank of the first relevant document within the top ``k``.

    Relevant means label >= threshold; queries with no relevant document at
    all are skipped.
    """
    if k < 1:
        raise ConfigError(f"metric cutoff must be >= 1, got {k}")
    per_query: dict[bytes, float] = {}
    skipped = 0
    for qid in _universe(run, qrels):
        labels = labels_for(qrels, qid)
        relevant = {d for d, rel in labels.items() if rel >= relevance_threshold}
        if not relevant:
            skipped += 1
            continue
        value = 0.0
        for i, doc in enumerate(run.get(qid, [])[:k]):
            if doc.doc_id in relevant:
                value = 1.0 / (i + 1)
                break
        per_query[qid] = value
    return MetricReport(per_query, skipped)


def recall_at_k(
    run: RunResult, qrels, k: int, relevance_threshold: int = 1
) -> MetricReport:
    """Fraction of a query's relevant documents found in the top ``k``."""
    if k < 1:
        raise ConfigError(f"metric cutoff must be >= 1, got {k}")
    per_query: dict[bytes, float] = {}
    skipped = 0
    for qid in _universe(run, qrels):
        labels = labels_for(qrels, qid)
        relevant = {d for d, rel in labels.items() if rel >= relevance_threshold}
        if not relevant:
            skipped += 1
            continue
        found = sum(
            1 for doc in run.get(qid, [])[:k] if doc.doc_id in relevant
        )
        per_query[qid] = found / len(relevant)
    return MetricReport(per_query, skipped)


def compute_metric(spec: MetricSpec, run: RunResult, qrels) -> MetricReport:
    if spec.name == "ndcg":
        return ndcg_at_k(run, qrels, spec.k)
    if spec.name == "mrr":
        return mrr_at_k(run, qrels, spec.k, spec.relevance_threshold)
    return recall_at_k(run, qrels, spec.k, spec.relevance_threshold)


def evaluate_run(
    run: RunResult, qrels, specs: Sequence[MetricSpec]
) -> dict[str, MetricReport]:
    """All requested metrics over one run; keys are "name@k" renderings."""
    if not specs:
        raise ConfigError("no metrics requested")
    out: dict[str, MetricReport] = {}
    for spec in specs:
        key = spec.render()
        if key in out:
            raise ConfigError(f"metric {key} requested twice")
        out[key] = compute_metric(spec, run, qrels)
    return out


def rerank_eval(
    scores: Mapping[bytes, Sequence[tuple[bytes, float]]],
    dev_qrels,
    specs: Sequence[MetricSpec],
) -> dict[str, MetricReport]:
    """Metrics over each query's annotated documents ranked by model score.

    Every scored document must be annotated for its query; an unannotated
    one is a contract violation and raises.  Ranking ties break by doc id
    ascending, matching the retrieval engine's rule.
    """
    run: RunResult = {}
    restricted: dict[bytes, dict[bytes, int]] = {}
    for qid, pairs in scores.items():
        labels = labels_for(dev_qrels, qid)
        seen: set[bytes] = set()
        for doc_id, _ in pairs:
            if doc_id not in labels:
                raise QrelkitError(
                    f"scored doc {doc_id!r} is not annotated for query {qid!r}"
                )
            if doc_id in seen:
                raise QrelkitError(f"doc {doc_id!r} scored twice for query {qid!r}")
            seen.add(doc_id)
        ranked = sorted(pairs, key=lambda p: (-p[1], p[0]))
        run[qid] = [ScoredDoc(doc_id=d, score=float(s)) for d, s in ranked]
        restricted[qid] = labels
    return evaluate_run(run, restricted, specs)
