"""Text encoding and the lazy embedding cache.

The built-in encoder is a signed hash projection: tokens (lowercased,
whitespace-split) each add +1 or -1 to one of ``dim`` buckets, chosen by a
keyed 64-bit hash of the token.  The result is L2-normalized, so identical
texts always score 1.0 against each other and lexical overlap produces
graded similarity.  It is bit-deterministic given (text, dim, seed) and has
no model dependencies; real encoders enter the pipeline by writing their
vectors through the cache builder instead.

Cache files (``<name>.qkec``) hold float32 little-endian vectors behind the
same sorted ID index used by record stores, plus a ``.ok`` completeness
marker; vectors are read lazily from the memory map, one per ``get``.
"""

from __future__ import annotations

import hashlib
import mmap
import struct
import tempfile
import threading
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DuplicateIdError, NotFoundError, StoreFormatError
from .store import (
    StoreHandle,
    TextRecord,
    _write_bytes,
    atomic_output,
    atomic_write,
    check_record_id,
)

CACHE_MAGIC = b"QKEC"
CACHE_VERSION = 1
_DTYPE_F32_LE = 1
_CACHE_HEADER = struct.Struct("<4sHIQB")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")

ENCODER_NAME = "hash-projection"


@dataclass(frozen=True)
class EncoderSpec:
    name: str = ENCODER_NAME
    dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.name != ENCODER_NAME:
            raise ConfigError(f"unknown encoder {self.name!r} (built in: {ENCODER_NAME!r})")
        if self.dim < 2:
            raise ConfigError(f"encoder dim must be >= 2, got {self.dim}")


def _token_hash(token: str, seed_key: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=seed_key).digest()
    return int.from_bytes(digest, "little")


def encode_text(spec: EncoderSpec, text: str) -> np.ndarray:
    """Encode one text into a unit-norm float32 vector of length ``spec.dim``.

    Empty or fully cancelling texts map to the first basis vector.
    """
    seed_key = spec.seed.to_bytes(8, "little")
    counts = [0] * spec.dim
    for token in text.lower().split():
        u = _token_hash(token, seed_key)
        sign = 1 if (u >> 63) & 1 == 0 else -1
        counts[u % spec.dim] += sign
    vec = np.array(counts, dtype=np.float64)
    norm = float(np.sqrt(np.dot(vec, vec)))
    if norm == 0.0:
        out = np.zeros(spec.dim, dtype=np.float32)
        out[0] = 1.0
        return out
    return (vec / norm).astype(np.float32)


def encode_record(spec: EncoderSpec, rec: TextRecord) -> np.ndarray:
    return encode_text(spec, rec.combined_text())


def similarity(q: np.ndarray, docs: np.ndarray) -> np.ndarray:
    """Dot products of one query vector against rows of ``docs``.

    Accumulates in float64 with a per-row reduction whose order depends only
    on the vector dimension, so scores are identical no matter how the rows
    are batched; results are rounded to float32.
    """
    q = np.asarray(q)
    docs = np.atleast_2d(np.asarray(docs))
    if docs.shape[1] != q.shape[0]:
        raise ConfigError(f"dim mismatch: query {q.shape[0]} vs docs {docs.shape[1]}")
    prod = docs.astype(np.float64) * q.astype(np.float64)
    return prod.sum(axis=1).astype(np.float32)


# ---------------------------------------------------------------------------
# cache files


class CacheBuilder:
    """Single-writer builder; ``finalize`` sorts the index and publishes.

    Nothing is visible to readers until finalize completes (file rename plus
    ``.ok`` marker), so a crash mid-build leaves no readable cache.
    """

    def __init__(self, path: Path, dim: int):
        if dim < 1:
            raise ConfigError(f"cache dim must be >= 1, got {dim}")
        self.path = Path(path)
        self.dim = dim
        self._payload_tmp = tempfile.NamedTemporaryFile(
            dir=self.path.parent, prefix=f".{self.path.name}.vec.", delete=False
        )
        self._entries: list[tuple[bytes, int]] = []
        self._seen: set[bytes] = set()
        self._offset = 0
        self._closed = False

    def add_batch(self, ids: Sequence[bytes], vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ConfigError(
                f"vector batch shape {vectors.shape} does not match dim {self.dim}"
            )
        if len(ids) != vectors.shape[0]:
            raise ConfigError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        for rid, vec in zip(ids, vectors):
            check_record_id(rid)
            if rid in self._seen:
                raise DuplicateIdError(rid, context=str(self.path))
            self._seen.add(rid)
            self._payload_tmp.write(vec.astype("<f4").tobytes())
            self._entries.append((rid, self._offset))
            self._offset += 4 * self.dim

    def finalize(self) -> Path:
        self._payload_tmp.flush()
        self._entries.sort(key=lambda e: e[0])
        row_bytes = 4 * self.dim
        try:
            with atomic_output(self.path) as out:
                _write_bytes(
                    out,
                    _CACHE_HEADER.pack(
                        CACHE_MAGIC, CACHE_VERSION, self.dim, len(self._entries), _DTYPE_F32_LE
                    ),
                )
                for rid, off in self._entries:
                    _write_bytes(
                        out, _U16.pack(len(rid)) + rid + _U64.pack(off) + _U64.pack(row_bytes)
                    )
                self._payload_tmp.seek(0)
                while True:
                    chunk = self._payload_tmp.read(1 << 20)
                    if not chunk:
                        break
                    _write_bytes(out, chunk)
        finally:
            self._cleanup_tmp()
        atomic_write(
            Path(str(self.path) + ".ok"), str(self.path.stat().st_size).encode()
        )
        return self.path

    def abort(self) -> None:
        self._cleanup_tmp()

    def _cleanup_tmp(self) -> None:
        if not self._closed:
            self._closed = True
            name = self._payload_tmp.name
            self._payload_tmp.close()
            try:
                Path(name).unlink(missing_ok=True)
            except OSError:
                pass


class EmbeddingCache:
    """Read-only cache handle; vectors are touched only on ``get``."""

    def __init__(self, path: Path):
        self.path = Path(path)
        marker = Path(str(self.path) + ".ok")
        if not self.path.exists() or not marker.exists():
            raise StoreFormatError(f"{self.path}: cache absent or incomplete")
        try:
            if int(marker.read_text()) != self.path.stat().st_size:
                raise StoreFormatError(f"{self.path}: size does not match marker")
        except ValueError as exc:
            raise StoreFormatError(f"{self.path}: unreadable marker") from exc
        self._file = open(self.path, "rb")
        self._mm = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
        buf = memoryview(self._mm)
        magic, version, dim, count, dtype = _CACHE_HEADER.unpack_from(buf, 0)
        if magic != CACHE_MAGIC or version != CACHE_VERSION or dtype != _DTYPE_F32_LE:
            buf.release()
            self._mm.close()
            self._file.close()
            raise StoreFormatError(f"{self.path}: bad cache header")
        self.dim = dim
        ids: list[bytes] = []
        offsets: list[int] = []
        pos = _CACHE_HEADER.size
        for _ in range(count):
            (id_len,) = _U16.unpack_from(buf, pos)
            pos += 2
            ids.append(bytes(buf[pos : pos + id_len]))
            pos += id_len
            (off,) = _U64.unpack_from(buf, pos)
            pos += 16
            offsets.append(off)
        self._ids = ids
        self._offsets = offsets
        self._payload_start = pos
        self._buf = buf
        self._touched = 0
        self._lock = threading.Lock()

    @property
    def vector_count(self) -> int:
        return len(self._ids)

    @property
    def vectors_touched(self) -> int:
        with self._lock:
            return self._touched

    def __contains__(self, record_id: bytes) -> bool:
        i = bisect_left(self._ids, record_id)
        return i < len(self._ids) and self._ids[i] == record_id

    def ids(self) -> list[bytes]:
        return list(self._ids)

    def get(self, record_id: bytes) -> np.ndarray:
        """One vector as a private copy, safe to keep after ``close``."""
        i = bisect_left(self._ids, record_id)
        if i >= len(self._ids) or self._ids[i] != record_id:
            raise NotFoundError(record_id)
        start = self._payload_start + self._offsets[i]
        vec = np.frombuffer(self._buf, dtype="<f4", count=self.dim, offset=start).copy()
        with self._lock:
            self._touched += 1
        return vec

    def get_optional(self, record_id: bytes) -> np.ndarray | None:
        try:
            return self.get(record_id)
        except NotFoundError:
            return None

    def close(self) -> None:
        self._buf.release()
        self._mm.close()
        self._file.close()

    def __enter__(self) -> "EmbeddingCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_cache(path: Path) -> EmbeddingCache:
    return EmbeddingCache(path)


def cache_is_complete(path: Path) -> bool:
    path = Path(path)
    return path.exists() and Path(str(path) + ".ok").exists()


def build_cache_from_store(
    store: StoreHandle, spec: EncoderSpec, out_path: Path, batch_size: int = 1024
) -> Path:
    """Encode every record of a store into a cache file."""
    builder = CacheBuilder(out_path, spec.dim)
    ids: list[bytes] = []
    vecs: list[np.ndarray] = []

    def flush():
        if ids:
            builder.add_batch(ids, np.stack(vecs))
            ids.clear()
            vecs.clear()

    try:
        for rec in store.iter_records():
            ids.append(rec.id)
            vecs.append(encode_record(spec, rec))
            if len(ids) >= batch_size:
                flush()
        flush()
    except BaseException:
        builder.abort()
        raise
    return builder.finalize()


def import_vectors(
    ids: Sequence[bytes], vectors: np.ndarray, dim: int, out_path: Path
) -> Path:
    """Write externally produced float32 vectors into a cache file.

    This is the interchange point for real model embeddings: anything written
    here is consumed by retrieval exactly like internally encoded vectors.
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[1] != dim:
        raise ConfigError(f"vector array shape {vectors.shape} does not match dim {dim}")
    builder = CacheBuilder(out_path, dim)
    try:
        builder.add_batch(list(ids), vectors)
    except BaseException:
        builder.abort()
        raise
    return builder.finalize()


def iter_vectors(cache: EmbeddingCache) -> Iterator[tuple[bytes, np.ndarray]]:
    for rid in cache.ids():
        yield rid, cache.get(rid)
