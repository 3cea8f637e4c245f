"""Qrel loading, grouping by query ID, and declarative transforms.

Qrel files are parsed by named loaders from a registry ("tsv" and "trec"
are built in; users add formats with ``@register_loader``).  Triples are
grouped into a store artifact indexed by query ID, cached by content
fingerprint so reruns skip all parsing and grouping.  A ``CollectionConfig``
then describes how one collection is reshaped: subset the queries, filter
by score range or named predicate, relabel, and sample per group.  Each
distinct (input, config, seed) combination materializes once and is reused
from cache afterwards.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .errors import ConfigError, FormatError, MissingRecordError, UnknownNameError
from .store import (
    StoreHandle,
    StoreWriter,
    TextRecord,
    atomic_write,
    cached_build,
    check_record_id,
    fingerprint_paths,
    open_store,
)

_SCORE_MIN, _SCORE_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class QrelTriple:
    query_id: bytes
    doc_id: bytes
    score: int

    def __post_init__(self):
        check_record_id(self.query_id)
        check_record_id(self.doc_id)
        if not _SCORE_MIN <= self.score <= _SCORE_MAX:
            raise ConfigError(f"score {self.score} does not fit in 32 bits")


@dataclass(frozen=True)
class QrelGroup:
    """One query ID with its (doc id, score) entries, sorted by doc id."""

    query_id: bytes
    entries: tuple[tuple[bytes, int], ...]


# ---------------------------------------------------------------------------
# registry

LoaderFn = Callable[[Path], Iterator[QrelTriple]]
FilterFn = Callable[[bytes, bytes, int], bool]
TransformFn = Callable[[int], int]


class Registry:
    """Named callbacks referenced from configs, keeping configs serializable."""

    def __init__(self):
        self.loaders: dict[str, LoaderFn] = {}
        self.filters: dict[str, FilterFn] = {}
        self.transforms: dict[str, TransformFn] = {}

    def loader(self, name: str) -> LoaderFn:
        if name not in self.loaders:
            raise UnknownNameError("qrel format", name, self.loaders)
        return self.loaders[name]

    def filter(self, name: str) -> FilterFn:
        if name not in self.filters:
            raise UnknownNameError("filter", name, self.filters)
        return self.filters[name]

    def transform(self, name: str) -> TransformFn:
        if name not in self.transforms:
            raise UnknownNameError("score transform", name, self.transforms)
        return self.transforms[name]


DEFAULT_REGISTRY = Registry()


def register_loader(name: str, registry: Registry = DEFAULT_REGISTRY):
    def deco(fn: LoaderFn) -> LoaderFn:
        registry.loaders[name] = fn
        return fn

    return deco


def register_filter(name: str, registry: Registry = DEFAULT_REGISTRY):
    def deco(fn: FilterFn) -> FilterFn:
        registry.filters[name] = fn
        return fn

    return deco


def register_transform(name: str, registry: Registry = DEFAULT_REGISTRY):
    def deco(fn: TransformFn) -> TransformFn:
        registry.transforms[name] = fn
        return fn

    return deco


def _parse_score(raw: str, path: Path, lineno: int) -> int:
    try:
        score = int(raw)
    except ValueError as exc:
        raise FormatError(f"score {raw!r} is not an integer", path, lineno) from exc
    if not _SCORE_MIN <= score <= _SCORE_MAX:
        raise FormatError(f"score {score} does not fit in 32 bits", path, lineno)
    return score


def _is_int(raw: str) -> bool:
    try:
        int(raw)
        return True
    except ValueError:
        return False


@register_loader("tsv")
def load_tsv_qrels(path: Path) -> Iterator[QrelTriple]:
    """Lines of ``qid<TAB>docid<TAB>score``; a first line whose third field
    is non-numeric is treated as a header and skipped."""
    with open(path, "r", encoding="utf-8") as f:
        first_data_line = True
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"expected 3 tab-separated fields, got {len(parts)}", path, lineno)
            if first_data_line and not _is_int(parts[2]):
                first_data_line = False
                continue
            first_data_line = False
            yield QrelTriple(
                query_id=parts[0].encode("utf-8"),
                doc_id=parts[1].encode("utf-8"),
                score=_parse_score(parts[2], path, lineno),
            )


@register_loader("trec")
def load_trec_qrels(path: Path) -> Iterator[QrelTriple]:
    """TREC qrels: ``qid 0 docid rel``, whitespace-separated."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"expected 4 whitespace-separated fields, got {len(parts)}", path, lineno)
            yield QrelTriple(
                query_id=parts[0].encode("utf-8"),
                doc_id=parts[2].encode("utf-8"),
                score=_parse_score(parts[3], path, lineno),
            )


def load_qrels(
    path: Path, fmt: str = "tsv", registry: Registry = DEFAULT_REGISTRY
) -> Iterator[QrelTriple]:
    return registry.loader(fmt)(Path(path))


# ---------------------------------------------------------------------------
# grouping


def group_triples(triples: Iterable[QrelTriple]) -> list[QrelGroup]:
    """Group triples by query ID with max-score dedupe of (qid, docid) pairs.

    Sort-based: order-independent and distinct from the map-of-maps oracle
    used in tests.
    """
    rows = [(t.query_id, t.doc_id, t.score) for t in triples]
    rows.sort()
    groups: list[QrelGroup] = []
    entries: list[tuple[bytes, int]] = []
    current: bytes | None = None
    for qid, did, score in rows:
        if qid != current:
            if current is not None and entries:
                groups.append(QrelGroup(current, tuple(entries)))
            current = qid
            entries = []
        if entries and entries[-1][0] == did:
            # Duplicate pair: rows are sorted by score ascending within the
            # pair, so the last one seen is the max.
            entries[-1] = (did, score)
        else:
            entries.append((did, score))
    if current is not None and entries:
        groups.append(QrelGroup(current, tuple(entries)))
    return groups


def _serialize_entries(entries: Sequence[tuple[bytes, int]]) -> str:
    return "\n".join(f"{did.decode('utf-8')}\t{score}" for did, score in entries)


def _deserialize_entries(text: str) -> tuple[tuple[bytes, int], ...]:
    out = []
    for line in text.split("\n"):
        did, score = line.split("\t")
        out.append((did.encode("utf-8"), int(score)))
    return tuple(out)


def write_group_store(groups: Iterable[QrelGroup], path: Path) -> Path:
    writer = StoreWriter(path)
    try:
        for group in groups:
            writer.add(group.query_id, None, _serialize_entries(group.entries))
    except BaseException:
        writer.abort()
        raise
    return writer.finalize()


class GroupStore:
    """Grouped qrels behind a record store: query-ID index, lazy entry decode."""

    def __init__(self, handle: StoreHandle):
        self._handle = handle

    @property
    def path(self) -> Path:
        return self._handle.path

    @property
    def groups_decoded(self) -> int:
        return self._handle.materialized_counter

    def __len__(self) -> int:
        return len(self._handle)

    def __contains__(self, query_id: bytes) -> bool:
        return query_id in self._handle

    def query_ids(self) -> list[bytes]:
        return self._handle.ids()

    def get(self, query_id: bytes) -> QrelGroup:
        rec = self._handle.get(query_id)
        return QrelGroup(query_id, _deserialize_entries(rec.text))

    def __iter__(self) -> Iterator[QrelGroup]:
        for qid in self._handle.ids():
            yield self.get(qid)

    def close(self) -> None:
        self._handle.close()


def open_group_store(path: Path) -> GroupStore:
    return GroupStore(open_store(path))


def group_by_query(
    qrel_path: Path,
    fmt: str = "tsv",
    registry: Registry = DEFAULT_REGISTRY,
    cache_dir: Path | None = None,
) -> tuple[GroupStore, bool]:
    """Grouped artifact for a qrel file; returns (store, came_from_cache).

    With no cache dir the artifact is built in the qrel file's directory.
    """
    qrel_path = Path(qrel_path)
    registry.loader(fmt)  # fail on unknown format before any I/O
    if cache_dir is None:
        out = qrel_path.with_suffix(qrel_path.suffix + ".groups.qkst")
        write_group_store(group_triples(load_qrels(qrel_path, fmt, registry)), out)
        return open_group_store(out), False
    fp = fingerprint_paths([qrel_path], {"stage": "group", "format": fmt})
    artifact, hit = cached_build(
        fp,
        cache_dir,
        lambda tmp: write_group_store(
            group_triples(load_qrels(qrel_path, fmt, registry)), tmp
        ),
    )
    return open_group_store(artifact), hit


# ---------------------------------------------------------------------------
# query subsets


def read_query_subset(path: Path) -> set[bytes]:
    """IDs named by a subset file.

    A file whose lines all parse as qrel TSV (3 tab fields) or TREC qrels
    (4 whitespace fields) contributes its first column; otherwise each
    non-empty line is taken verbatim as one ID.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in f]
    stripped = [ln for ln in lines if ln.strip()]
    if not stripped:
        return set()
    if all(len(ln.split("\t")) == 3 for ln in stripped):
        first = stripped[0].split("\t")
        body = stripped[1:] if not _is_int(first[2]) else stripped
        return {ln.split("\t")[0].encode("utf-8") for ln in body}
    if all(len(ln.split()) == 4 for ln in stripped):
        return {ln.split()[0].encode("utf-8") for ln in stripped}
    return {ln.strip().encode("utf-8") for ln in stripped}


# ---------------------------------------------------------------------------
# collection configs


@dataclass(frozen=True)
class CollectionConfig:
    """Declarative recipe for loading and transforming one qrel collection."""

    qrel_path: str
    qrel_format: str = "tsv"
    query_path: str | None = None
    corpus_path: str | None = None
    query_subset_path: str | None = None
    min_score: int | None = None
    max_score: int | None = None
    score_transform: int | str | None = None
    group_random_k: int | None = None
    filter_fn: str | None = None
    seed_salt: str = ""

    def __post_init__(self):
        if (
            self.min_score is not None
            and self.max_score is not None
            and self.min_score > self.max_score
        ):
            raise ConfigError(f"min_score {self.min_score} > max_score {self.max_score}")
        if self.group_random_k is not None and self.group_random_k < 1:
            raise ConfigError(f"group_random_k must be >= 1, got {self.group_random_k}")

    def is_identity(self) -> bool:
        return (
            self.query_subset_path is None
            and self.min_score is None
            and self.max_score is None
            and self.score_transform is None
            and self.group_random_k is None
            and self.filter_fn is None
        )

    def to_mapping(self) -> dict:
        return {
            "qrel_path": self.qrel_path,
            "qrel_format": self.qrel_format,
            "query_path": self.query_path,
            "corpus_path": self.corpus_path,
            "query_subset_path": self.query_subset_path,
            "min_score": self.min_score,
            "max_score": self.max_score,
            "score_transform": self.score_transform,
            "group_random_k": self.group_random_k,
            "filter_fn": self.filter_fn,
            "seed_salt": self.seed_salt,
        }

    @classmethod
    def from_mapping(cls, obj: dict) -> "CollectionConfig":
        if "qrel_path" not in obj:
            raise ConfigError("collection config missing qrel_path")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown collection config fields: {sorted(extra)}")
        return cls(**obj)


def _sample_ranks(seed: int, salt: str, query_id: bytes, doc_ids: Iterable[bytes]):
    # Keyed-hash ranking is a uniform without-replacement sampler that is
    # stable across platforms, library versions, and resharding.
    key = hashlib.blake2b(
        seed.to_bytes(8, "little") + b"|" + salt.encode("utf-8") + b"|" + query_id,
        digest_size=32,
    ).digest()
    return {
        did: hashlib.blake2b(did, digest_size=16, key=key).digest() for did in doc_ids
    }


def sample_without_replacement(
    entries: Sequence[tuple[bytes, int]], k: int, seed: int, salt: str, query_id: bytes
) -> tuple[tuple[bytes, int], ...]:
    """Deterministically keep ``k`` entries, preserving doc-id order."""
    if len(entries) <= k:
        return tuple(entries)
    ranks = _sample_ranks(seed, salt, query_id, (did for did, _ in entries))
    chosen = sorted(entries, key=lambda e: (ranks[e[0]], e[0]))[:k]
    chosen.sort(key=lambda e: e[0])
    return tuple(chosen)


def transform_group(
    group: QrelGroup, cfg: CollectionConfig, registry: Registry, seed: int,
    subset: set[bytes] | None,
) -> QrelGroup | None:
    """Apply the config pipeline to one group; None when it is dropped.

    Fixed order: query subset, score range, named filter, score transform,
    random-k sampling.
    """
    if subset is not None and group.query_id not in subset:
        return None
    entries = group.entries
    if cfg.min_score is not None:
        entries = tuple(e for e in entries if e[1] >= cfg.min_score)
    if cfg.max_score is not None:
        entries = tuple(e for e in entries if e[1] <= cfg.max_score)
    if cfg.filter_fn is not None:
        pred = registry.filter(cfg.filter_fn)
        entries = tuple(e for e in entries if pred(group.query_id, e[0], e[1]))
    if cfg.score_transform is not None:
        if isinstance(cfg.score_transform, int):
            entries = tuple((did, cfg.score_transform) for did, _ in entries)
        else:
            fn = registry.transform(cfg.score_transform)
            entries = tuple((did, fn(score)) for did, score in entries)
    if cfg.group_random_k is not None:
        entries = sample_without_replacement(
            entries, cfg.group_random_k, seed, cfg.seed_salt, group.query_id
        )
    if not entries:
        return None
    return QrelGroup(group.query_id, entries)


def apply_config(
    groups: GroupStore,
    cfg: CollectionConfig,
    registry: Registry = DEFAULT_REGISTRY,
    seed: int = 0,
    cache_dir: Path | None = None,
) -> tuple[GroupStore, bool]:
    """Transformed grouped view per the config; (store, came_from_cache).

    Identity configs return the input store untouched.  Unknown filter or
    transform names fail before any work.
    """
    if cfg.is_identity():
        return groups, True
    if cfg.filter_fn is not None:
        registry.filter(cfg.filter_fn)
    if isinstance(cfg.score_transform, str):
        registry.transform(cfg.score_transform)
    subset = (
        read_query_subset(cfg.query_subset_path)
        if cfg.query_subset_path is not None
        else None
    )

    def transformed() -> Iterator[QrelGroup]:
        for group in groups:
            out = transform_group(group, cfg, registry, seed, subset)
            if out is not None:
                yield out

    if cache_dir is None:
        out_path = Path(str(groups.path) + ".view.qkst")
        write_group_store(transformed(), out_path)
        return open_group_store(out_path), False
    streams = [groups.path]
    if cfg.query_subset_path is not None:
        streams.append(Path(cfg.query_subset_path))
    transform_cfg = cfg.to_mapping()
    # Paths already participate through the streams' content.
    for path_field in ("qrel_path", "query_path", "corpus_path", "query_subset_path"):
        transform_cfg.pop(path_field, None)
    transform_cfg["_subset"] = cfg.query_subset_path is not None
    fp = fingerprint_paths(
        streams, {"stage": "transform", "seed": seed, "config": transform_cfg}
    )
    artifact, hit = cached_build(
        fp, cache_dir, lambda tmp: write_group_store(transformed(), tmp)
    )
    return open_group_store(artifact), hit


def labels_for(qrels, query_id: bytes) -> dict[bytes, int]:
    """Doc-to-label mapping for one query; empty when the query is absent.

    Accepts a GroupStore or a plain {query_id: {doc_id: label}} mapping, so
    callers can pass either an on-disk collection or a literal.
    """
    if isinstance(qrels, GroupStore):
        if query_id in qrels:
            return dict(qrels.get(query_id).entries)
        return {}
    return dict(qrels.get(query_id, {}))


def grouped_ids(qrels) -> list[bytes]:
    if isinstance(qrels, GroupStore):
        return qrels.query_ids()
    return sorted(qrels)


def write_qrels_tsv(triples: Iterable[QrelTriple], path: Path) -> int:
    """Serialize triples as 3-column TSV, loadable by the "tsv" loader."""
    lines = [
        f"{t.query_id.decode('utf-8')}\t{t.doc_id.decode('utf-8')}\t{t.score}\n"
        for t in triples
    ]
    atomic_write(Path(path), "".join(lines).encode("utf-8"))
    return len(lines)


def materialize_group(
    group: QrelGroup, query_store: StoreHandle, corpus_store: StoreHandle
) -> tuple[TextRecord, list[tuple[TextRecord, int]]]:
    """Resolve one group's IDs to records: exactly 1 + len(entries) decodes."""
    try:
        query = query_store.get(group.query_id)
    except Exception as exc:
        raise MissingRecordError("query", group.query_id) from exc
    docs = []
    for did, score in group.entries:
        try:
            docs.append((corpus_store.get(did), score))
        except Exception as exc:
            raise MissingRecordError("corpus", did) from exc
    return query, docs
