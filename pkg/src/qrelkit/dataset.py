"""Datasets assembled from one or more transformed qrel collections.

A dataset spec names an ordered list of collections plus default query and
corpus files.  Loading resolves every file into cached store artifacts, then
serves examples by random access: only the group entries and text records of
the requested query are ever decoded.  Three views share the machinery:

* multi-level: per query, graded (document, label) pairs merged across
  collections, earliest collection winning label collisions;
* binary: one positive plus sampled negatives per query, for contrastive
  training data;
* encoding: flat ID list whose payload is a cached vector when available
  and raw text otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .embedding import EmbeddingCache
from .errors import ConfigError, MissingRecordError
from .qrels import (
    DEFAULT_REGISTRY,
    CollectionConfig,
    GroupStore,
    Registry,
    apply_config,
    group_by_query,
    sample_without_replacement,
)
from .store import (
    StoreHandle,
    TextRecord,
    _write_bytes,
    atomic_output,
    build_store,
    cached_store_from_jsonl,
)

_BINARY_SALT = "bin"


@dataclass(frozen=True)
class MultiLevelExample:
    """One query with its merged (document, label) pairs.

    Docs are sorted by (label desc, doc id asc) and contain no duplicate ids.
    """

    query: TextRecord
    docs: tuple[tuple[TextRecord, int], ...]

    @property
    def query_id(self) -> bytes:
        return self.query.id

    def labels(self) -> list[int]:
        return [label for _, label in self.docs]


@dataclass(frozen=True)
class BinaryExample:
    """One query with a positive and zero or more sampled negatives.

    ``short`` is True when fewer negatives than requested were available;
    missing negatives are never invented.
    """

    query: TextRecord
    positive: TextRecord
    negatives: tuple[TextRecord, ...]
    short: bool


@dataclass(frozen=True)
class EncodingItem:
    """ID plus either a cached vector or the raw record, never both."""

    id: bytes
    vector: np.ndarray | None
    record: TextRecord | None


@dataclass(frozen=True)
class DatasetSpec:
    """Declarative description of a dataset build."""

    collections: tuple[CollectionConfig, ...]
    query_path: str | None = None
    corpus_path: str | None = None
    seed: int = 42
    positive_threshold: int = 1
    negatives_per_query: int = 1

    def __post_init__(self):
        if not self.collections:
            raise ConfigError("dataset spec needs at least one collection")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.negatives_per_query < 1:
            raise ConfigError(
                f"negatives_per_query must be >= 1, got {self.negatives_per_query}"
            )

    def to_mapping(self) -> dict:
        return {
            "collections": [c.to_mapping() for c in self.collections],
            "query_path": self.query_path,
            "corpus_path": self.corpus_path,
            "seed": self.seed,
            "positive_threshold": self.positive_threshold,
            "negatives_per_query": self.negatives_per_query,
        }

    @classmethod
    def from_mapping(cls, obj: dict) -> "DatasetSpec":
        if not isinstance(obj, dict):
            raise ConfigError("dataset spec must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown dataset spec fields: {sorted(extra)}")
        raw = obj.get("collections")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("dataset spec needs a non-empty collections list")
        collections = tuple(CollectionConfig.from_mapping(c) for c in raw)
        rest = {k: v for k, v in obj.items() if k != "collections"}
        return cls(collections=collections, **rest)

    @classmethod
    def from_json(cls, text: str) -> "DatasetSpec":
        try:
            return cls.from_mapping(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"dataset spec is not valid JSON: {exc.msg}") from exc


@dataclass
class LoadedCollection:
    """A collection with its transformed groups and resolved stores."""

    config: CollectionConfig
    groups: GroupStore
    query_store: StoreHandle
    corpus_store: StoreHandle


@dataclass
class LoadReport:
    """Build-vs-reuse accounting for one dataset load."""

    built: int = 0
    reused: int = 0

    def note(self, was_hit: bool) -> None:
        if was_hit:
            self.reused += 1
        else:
            self.built += 1


def _resolve_path(raw: str, base_dir: Path | None) -> Path:
    p = Path(raw)
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    return p


class _StorePool:
    """Opens each distinct file once; handles shared across collections."""

    def __init__(self, cache_dir: Path | None, report: LoadReport):
        self._cache_dir = cache_dir
        self._report = report
        self._handles: dict[Path, StoreHandle] = {}

    def get(self, path: Path) -> StoreHandle:
        key = Path(path).resolve()
        if key in self._handles:
            return self._handles[key]
        if self._cache_dir is not None:
            handle, hit = cached_store_from_jsonl(key, self._cache_dir)
            self._report.note(hit)
        else:
            handle = build_store(key, key.parent)
            self._report.note(False)
        self._handles[key] = handle
        return handle

    def handles(self) -> list[StoreHandle]:
        return list(self._handles.values())


def load_collections(
    spec: DatasetSpec,
    registry: Registry = DEFAULT_REGISTRY,
    cache_dir: Path | None = None,
    base_dir: Path | None = None,
) -> tuple[list[LoadedCollection], LoadReport]:
    """Resolve every collection of a spec into stores and transformed groups."""
    report = LoadReport()
    pool = _StorePool(cache_dir, report)
    out = []
    for i, cfg in enumerate(spec.collections):
        qp = cfg.query_path or spec.query_path
        cp = cfg.corpus_path or spec.corpus_path
        if qp is None:
            raise ConfigError(f"collection {i} has no query_path and no default")
        if cp is None:
            raise ConfigError(f"collection {i} has no corpus_path and no default")
        if cfg.query_subset_path is not None:
            cfg = _rebase_subset(cfg, base_dir)
        groups, hit = group_by_query(
            _resolve_path(cfg.qrel_path, base_dir), cfg.qrel_format, registry, cache_dir
        )
        report.note(hit)
        view, hit = apply_config(groups, cfg, registry, spec.seed, cache_dir)
        report.note(hit)
        out.append(
            LoadedCollection(
                config=cfg,
                groups=view,
                query_store=pool.get(_resolve_path(qp, base_dir)),
                corpus_store=pool.get(_resolve_path(cp, base_dir)),
            )
        )
    return out, report


def _rebase_subset(cfg: CollectionConfig, base_dir: Path | None) -> CollectionConfig:
    return replace(
        cfg, query_subset_path=str(_resolve_path(cfg.query_subset_path, base_dir))
    )


class MultiLevelDataset:
    """Random-access merged view over the collections of a spec.

    Queries are the sorted union of surviving query IDs.  ``get_example``
    decodes exactly the requested query's group entries and text records;
    nothing is loaded ahead of time.  Immutable and safe for concurrent
    readers.
    """

    def __init__(self, collections: Sequence[LoadedCollection]):
        if not collections:
            raise ConfigError("dataset needs at least one collection")
        self._collections = list(collections)
        qids: set[bytes] = set()
        for coll in self._collections:
            qids.update(coll.groups.query_ids())
        self._query_ids = sorted(qids)

    @classmethod
    def load(
        cls,
        spec: DatasetSpec,
        registry: Registry = DEFAULT_REGISTRY,
        cache_dir: Path | None = None,
        base_dir: Path | None = None,
    ) -> tuple["MultiLevelDataset", LoadReport]:
        collections, report = load_collections(spec, registry, cache_dir, base_dir)
        return cls(collections), report

    @property
    def collections(self) -> list[LoadedCollection]:
        return list(self._collections)

    def __len__(self) -> int:
        return len(self._query_ids)

    def query_ids(self) -> list[bytes]:
        return list(self._query_ids)

    def corpus_decodes(self) -> int:
        """Total corpus text records decoded so far (shared stores counted once)."""
        seen: dict[int, StoreHandle] = {}
        for coll in self._collections:
            seen[id(coll.corpus_store)] = coll.corpus_store
        return sum(h.materialized_counter for h in seen.values())

    def merged_entries(self, query_id: bytes) -> tuple[int, dict[bytes, tuple[int, int]]]:
        """Labels for one query without touching any text payload.

        Returns (owner collection index, {doc_id: (label, collection index)}).
        On a (query, doc) collision the earliest collection keeps its label.
        """
        merged: dict[bytes, tuple[int, int]] = {}
        owner = -1
        for idx, coll in enumerate(self._collections):
            if query_id not in coll.groups:
                continue
            if owner < 0:
                owner = idx
            for did, score in coll.groups.get(query_id).entries:
                if did not in merged:
                    merged[did] = (score, idx)
        if owner < 0:
            raise KeyError(f"query {query_id!r} not in dataset")
        return owner, merged

    def get_example(self, i: int) -> MultiLevelExample:
        if not 0 <= i < len(self._query_ids):
            raise IndexError(f"example index {i} out of range [0, {len(self)})")
        qid = self._query_ids[i]
        owner, merged = self.merged_entries(qid)
        query = self._get_query(owner, qid)
        docs = []
        for did, (label, idx) in merged.items():
            docs.append((self._get_doc(idx, did), label))
        docs.sort(key=lambda dl: (-dl[1], dl[0].id))
        return MultiLevelExample(query=query, docs=tuple(docs))

    def _get_query(self, coll_idx: int, qid: bytes) -> TextRecord:
        rec = self._collections[coll_idx].query_store.get_optional(qid)
        if rec is None:
            raise MissingRecordError("query", qid)
        return rec

    def _get_doc(self, coll_idx: int, did: bytes) -> TextRecord:
        rec = self._collections[coll_idx].corpus_store.get_optional(did)
        if rec is None:
            raise MissingRecordError("corpus", did)
        return rec

    def __iter__(self) -> Iterator[MultiLevelExample]:
        for i in range(len(self)):
            yield self.get_example(i)

    def close(self) -> None:
        closed: set[int] = set()
        for coll in self._collections:
            for h in (coll.groups, coll.query_store, coll.corpus_store):
                if id(h) not in closed:
                    closed.add(id(h))
                    h.close()


class BinaryDataset:
    """Positive-plus-negatives view for contrastive training.

    Construction scans group labels (text payloads untouched) to find queries
    holding at least one positive and one negative under the threshold;
    the rest are dropped and counted.  Negative choice is a deterministic
    function of (seed, query id), so examples do not depend on how workers
    later shard the dataset.
    """

    def __init__(
        self,
        dataset: MultiLevelDataset,
        positive_threshold: int = 1,
        negatives_per_query: int = 1,
        seed: int = 42,
    ):
        if negatives_per_query < 1:
            raise ConfigError(
                f"negatives_per_query must be >= 1, got {negatives_per_query}"
            )
        self._dataset = dataset
        self._threshold = positive_threshold
        self._num_negatives = negatives_per_query
        self._seed = seed
        self._eligible: list[bytes] = []
        dropped = 0
        for qid in dataset.query_ids():
            _, merged = dataset.merged_entries(qid)
            has_pos = any(lab >= positive_threshold for lab, _ in merged.values())
            has_neg = any(lab < positive_threshold for lab, _ in merged.values())
            if has_pos and has_neg:
                self._eligible.append(qid)
            else:
                dropped += 1
        self.dropped_count = dropped

    @classmethod
    def from_spec(
        cls,
        spec: DatasetSpec,
        registry: Registry = DEFAULT_REGISTRY,
        cache_dir: Path | None = None,
        base_dir: Path | None = None,
    ) -> tuple["BinaryDataset", LoadReport]:
        ds, report = MultiLevelDataset.load(spec, registry, cache_dir, base_dir)
        return (
            cls(ds, spec.positive_threshold, spec.negatives_per_query, spec.seed),
            report,
        )

    def __len__(self) -> int:
        return len(self._eligible)

    def query_ids(self) -> list[bytes]:
        return list(self._eligible)

    def get_example(self, i: int) -> BinaryExample:
        if not 0 <= i < len(self._eligible):
            raise IndexError(f"example index {i} out of range [0, {len(self)})")
        qid = self._eligible[i]
        ds = self._dataset
        owner, merged = ds.merged_entries(qid)
        positive_id = min(
            (did for did, (lab, _) in merged.items() if lab >= self._threshold),
            key=lambda did: (-merged[did][0], did),
        )
        negative_pool = sorted(
            (did, lab) for did, (lab, _) in merged.items() if lab < self._threshold
        )
        chosen = sample_without_replacement(
            negative_pool, self._num_negatives, self._seed, _BINARY_SALT, qid
        )
        query = ds._get_query(owner, qid)
        positive = ds._get_doc(merged[positive_id][1], positive_id)
        negatives = tuple(ds._get_doc(merged[did][1], did) for did, _ in chosen)
        return BinaryExample(
            query=query,
            positive=positive,
            negatives=negatives,
            short=len(negatives) < self._num_negatives,
        )

    def __iter__(self) -> Iterator[BinaryExample]:
        for i in range(len(self)):
            yield self.get_example(i)

    def close(self) -> None:
        self._dataset.close()


class EncodingDataset:
    """Sorted ID list whose items resolve lazily to vectors or text.

    An item's payload is the cached vector exactly when the cache holds its
    ID; otherwise the record text is decoded on access.
    """

    def __init__(
        self,
        ids: Sequence[bytes],
        store: StoreHandle,
        cache: EmbeddingCache | None = None,
        side: str = "corpus",
    ):
        unique = sorted(set(ids))
        for rid in unique:
            if rid not in store:
                raise MissingRecordError(side, rid)
        self._ids = unique
        self._store = store
        self._cache = cache
        self._side = side

    def __len__(self) -> int:
        return len(self._ids)

    def ids(self) -> list[bytes]:
        return list(self._ids)

    def get(self, i: int) -> EncodingItem:
        rid = self._ids[i]
        if self._cache is not None and rid in self._cache:
            return EncodingItem(id=rid, vector=self._cache.get(rid), record=None)
        return EncodingItem(id=rid, vector=None, record=self._store.get(rid))

    def __iter__(self) -> Iterator[EncodingItem]:
        for i in range(len(self)):
            yield self.get(i)


# ---------------------------------------------------------------------------
# export and the eager comparison baseline


def _record_fields(rec: TextRecord) -> dict:
    return {"title": rec.title, "text": rec.text}


def _example_to_obj(ex: MultiLevelExample) -> dict:
    return {
        "query_id": ex.query.id.decode("utf-8"),
        "query": ex.query.combined_text(),
        "docs": [
            {"doc_id": rec.id.decode("utf-8"), "label": label, **_record_fields(rec)}
            for rec, label in ex.docs
        ],
    }


def _binary_to_obj(ex: BinaryExample) -> dict:
    return {
        "query_id": ex.query.id.decode("utf-8"),
        "query": ex.query.combined_text(),
        "positive": {"doc_id": ex.positive.id.decode("utf-8"), **_record_fields(ex.positive)},
        "negatives": [
            {"doc_id": rec.id.decode("utf-8"), **_record_fields(rec)}
            for rec in ex.negatives
        ],
        "short": ex.short,
    }


def export_jsonl(dataset: MultiLevelDataset | BinaryDataset, out_path: Path) -> int:
    """Write one JSON object per example; returns the example count.

    Output is published atomically: a crash mid-export leaves the previous
    file (or nothing), never a truncated one.
    """
    to_obj = _binary_to_obj if isinstance(dataset, BinaryDataset) else _example_to_obj
    count = 0
    with atomic_output(Path(out_path)) as f:
        for ex in dataset:
            line = json.dumps(to_obj(ex), separators=(",", ":")) + "\n"
            _write_bytes(f, line.encode("utf-8"))
            count += 1
    return count


def eager_materialize(dataset: MultiLevelDataset) -> dict[bytes, TextRecord]:
    """Decode every corpus record upfront; the load-everything baseline.

    Exists for the memory benchmark: its decode count is the denominator the
    lazy path is compared against.
    """
    everything: dict[bytes, TextRecord] = {}
    seen: set[int] = set()
    for coll in dataset.collections:
        store = coll.corpus_store
        if id(store) in seen:
            continue
        seen.add(id(store))
        for rec in store.iter_records():
            everything.setdefault(rec.id, rec)
    return everything
