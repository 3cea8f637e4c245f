"""Immutable, memory-mapped, ID-indexed record storage.

A store file (``<name>.qkst``) holds text records addressable by byte-string
ID.  Layout (all integers little-endian):

    header:  magic b"QKST", version u16, record_count u64
    index:   record_count entries of {id_len u16, id bytes, offset u64, len u64},
             sorted strictly ascending by id; offsets are relative to the
             payload section
    payload: per record {has_title u8, [title_len u32, title], text_len u32, text}

Opening a store parses the header and index; record text is decoded only on
``get``.  Files are published with write-to-temp-then-rename so readers never
observe a torn file.  A content fingerprint (128-bit blake2b) keys a build
cache of ``<hex>`` artifact plus ``<hex>.ok`` completeness marker.
"""

from __future__ import annotations

import hashlib
import json
import mmap
import os
import struct
import tempfile
import threading
from bisect import bisect_left
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, Iterator

from filelock import FileLock

from .errors import (
    DuplicateIdError,
    FormatError,
    InvalidIdError,
    NotFoundError,
    StoreFormatError,
)

MAGIC = b"QKST"
VERSION = 1
_HEADER = struct.Struct("<4sHQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

_CHUNK = 1 << 20
_MAX_ID_LEN = 0xFFFF

# IDs are compared bytewise and embedded in tab/newline-delimited text formats
# and fixed-width byte tables, so those separators (and NUL) are excluded.
_FORBIDDEN_ID_BYTES = (b"\t", b"\n", b"\r", b"\x00")


def check_record_id(record_id: bytes) -> bytes:
    """Validate an ID, returning it unchanged."""
    if not isinstance(record_id, bytes):
        raise InvalidIdError(f"id must be bytes, got {type(record_id).__name__}")
    if not record_id:
        raise InvalidIdError("id must be non-empty")
    if len(record_id) > _MAX_ID_LEN:
        raise InvalidIdError(f"id longer than {_MAX_ID_LEN} bytes")
    for b in _FORBIDDEN_ID_BYTES:
        if b in record_id:
            raise InvalidIdError(f"id {record_id!r} contains forbidden byte {b!r}")
    return record_id


def id_from_str(s: str) -> bytes:
    return check_record_id(s.encode("utf-8"))


@dataclass(frozen=True)
class TextRecord:
    """One query or corpus entry."""

    id: bytes
    title: str | None
    text: str

    def __post_init__(self):
        check_record_id(self.id)
        if not self.text and not self.title:
            raise InvalidIdError(
                f"record {self.id!r}: text may be empty only if title is non-empty"
            )

    def combined_text(self) -> str:
        """Title and text joined for encoding."""
        if self.title:
            return f"{self.title} {self.text}" if self.text else self.title
        return self.text


# ---------------------------------------------------------------------------
# atomic writes


def _write_bytes(fobj: BinaryIO, payload: bytes) -> None:
    # Seam for the fault-injection tests: all of atomic_write's payload
    # bytes pass through here in bounded chunks.
    view = memoryview(payload)
    for off in range(0, len(view), _CHUNK):
        fobj.write(view[off : off + _CHUNK])


@contextmanager
def atomic_output(path: Path) -> Iterator[BinaryIO]:
    """Open a temp file next to ``path``; rename over it only on clean exit.

    On any exception the temp file is removed and ``path`` keeps its previous
    content (or stays absent).
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.tmp.")
    tmp = Path(tmp)
    try:
        # mkstemp creates 0600 files; published artifacts should get the
        # same permissions a plain open() would.
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as f:
            yield f
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            tmp.unlink(missing_ok=True)
        except OSError:
            pass
        raise


def atomic_write(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` atomically (temp file + rename)."""
    with atomic_output(Path(path)) as f:
        _write_bytes(f, payload)


# ---------------------------------------------------------------------------
# fingerprinting


@dataclass(frozen=True)
class Fingerprint:
    """128-bit content digest, rendered as 32 lowercase hex chars."""

    hex: str

    def __post_init__(self):
        if len(self.hex) != 32 or self.hex != self.hex.lower():
            raise ValueError(f"bad fingerprint rendering: {self.hex!r}")

    def __str__(self) -> str:
        return self.hex


def canonical_config(config: dict) -> bytes:
    """Sorted-key, whitespace-free JSON rendering of a config mapping."""
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def fingerprint(streams: Iterable, config_canonical: bytes = b"") -> Fingerprint:
    """Digest the full content of each stream, in order, plus the config.

    Each stream may be a ``bytes`` object or a binary file-like; file-likes
    are consumed in bounded chunks.  Streams are framed with a length suffix
    so concatenation cannot collide across stream boundaries.
    """
    h = hashlib.blake2b(digest_size=16)
    for stream in streams:
        h.update(b"S")
        if isinstance(stream, (bytes, bytearray, memoryview)):
            data = bytes(stream)
            h.update(data)
            total = len(data)
        else:
            total = 0
            while True:
                chunk = stream.read(_CHUNK)
                if not chunk:
                    break
                h.update(chunk)
                total += len(chunk)
        h.update(b"\x00" + _U64.pack(total))
    h.update(b"C" + _U64.pack(len(config_canonical)) + config_canonical)
    return Fingerprint(h.hexdigest())


def fingerprint_paths(paths: Iterable[Path], config: dict) -> Fingerprint:
    """Fingerprint file contents (in path order) together with a config dict."""
    canon = canonical_config(config)
    handles = []
    try:
        for p in paths:
            handles.append(open(p, "rb"))
        return fingerprint(handles, canon)
    finally:
        for f in handles:
            f.close()


# ---------------------------------------------------------------------------
# store writing


class StoreWriter:
    """Streams records into a store file; payload never held in memory.

    Records may arrive in any order.  ``finalize`` sorts the index, verifies
    ID uniqueness, and publishes the file atomically.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._payload_tmp = tempfile.NamedTemporaryFile(
            dir=self.path.parent, prefix=f".{self.path.name}.payload.", delete=False
        )
        self._entries: list[tuple[bytes, int, int]] = []
        self._offset = 0
        self._closed = False

    def add(self, record_id: bytes, title: str | None, text: str) -> None:
        check_record_id(record_id)
        parts = []
        if title is not None:
            tb = title.encode("utf-8")
            parts.append(b"\x01" + _U32.pack(len(tb)) + tb)
        else:
            parts.append(b"\x00")
        xb = text.encode("utf-8")
        parts.append(_U32.pack(len(xb)) + xb)
        blob = b"".join(parts)
        self._payload_tmp.write(blob)
        self._entries.append((record_id, self._offset, len(blob)))
        self._offset += len(blob)

    def add_record(self, rec: TextRecord) -> None:
        self.add(rec.id, rec.title, rec.text)

    def finalize(self) -> Path:
        self._payload_tmp.flush()
        self._entries.sort(key=lambda e: e[0])
        for a, b in zip(self._entries, self._entries[1:]):
            if a[0] == b[0]:
                self.abort()
                raise DuplicateIdError(a[0], context=str(self.path))
        try:
            with atomic_output(self.path) as out:
                _write_bytes(out, _HEADER.pack(MAGIC, VERSION, len(self._entries)))
                for rid, off, ln in self._entries:
                    _write_bytes(
                        out, _U16.pack(len(rid)) + rid + _U64.pack(off) + _U64.pack(ln)
                    )
                self._payload_tmp.seek(0)
                while True:
                    chunk = self._payload_tmp.read(_CHUNK)
                    if not chunk:
                        break
                    _write_bytes(out, chunk)
        finally:
            self._cleanup_tmp()
        return self.path

    def abort(self) -> None:
        self._cleanup_tmp()

    def _cleanup_tmp(self) -> None:
        if not self._closed:
            self._closed = True
            name = self._payload_tmp.name
            self._payload_tmp.close()
            try:
                os.unlink(name)
            except OSError:
                pass


def _parse_jsonl_records(path: Path) -> Iterator[TextRecord]:
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON: {exc.msg}", path, lineno) from exc
            if not isinstance(obj, dict) or "_id" not in obj:
                raise FormatError('missing "_id" field', path, lineno)
            if "text" not in obj:
                raise FormatError('missing "text" field', path, lineno)
            try:
                yield TextRecord(
                    id=id_from_str(str(obj["_id"])),
                    title=obj.get("title"),
                    text=str(obj["text"]),
                )
            except InvalidIdError as exc:
                raise FormatError(str(exc), path, lineno) from exc


def build_store(records_path: Path, out_dir: Path, name: str | None = None) -> "StoreHandle":
    """Build a store from a JSONL file of ``{"_id", "title"?, "text"}`` objects.

    Input is streamed; peak memory is bounded by the index (IDs and offsets),
    not the payload.
    """
    records_path = Path(records_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if name is None:
        name = records_path.stem
    writer = StoreWriter(out_dir / f"{name}.qkst")
    try:
        for rec in _parse_jsonl_records(records_path):
            writer.add_record(rec)
    except BaseException:
        writer.abort()
        raise
    return open_store(writer.finalize())


# ---------------------------------------------------------------------------
# store reading


class StoreHandle:
    """Open store: parsed index plus memory-mapped payload.

    Immutable after open; safe for concurrent readers.  ``materialized_counter``
    counts successful record decodes (one per ``get`` hit).
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._file = open(self.path, "rb")
        try:
            self._mm = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
        except ValueError:
            # Zero-byte file cannot be mapped; fail the header check below.
            self._file.close()
            raise StoreFormatError(f"{self.path}: empty store file")
        try:
            buf = memoryview(self._mm)
            if len(buf) < _HEADER.size:
                raise StoreFormatError(f"{self.path}: truncated header")
            magic, version, count = _HEADER.unpack_from(buf, 0)
            if magic != MAGIC:
                raise StoreFormatError(f"{self.path}: bad magic {magic!r}")
            if version != VERSION:
                raise StoreFormatError(f"{self.path}: unsupported version {version}")
            ids: list[bytes] = []
            offsets: list[int] = []
            lengths: list[int] = []
            pos = _HEADER.size
            for _ in range(count):
                (id_len,) = _U16.unpack_from(buf, pos)
                pos += 2
                ids.append(bytes(buf[pos : pos + id_len]))
                pos += id_len
                (off,) = _U64.unpack_from(buf, pos)
                (ln,) = _U64.unpack_from(buf, pos + 8)
                pos += 16
                offsets.append(off)
                lengths.append(ln)
            self._payload_start = pos
            payload_size = len(buf) - pos
            for i in range(count):
                if offsets[i] + lengths[i] > payload_size:
                    raise StoreFormatError(
                        f"{self.path}: index entry {ids[i]!r} exceeds payload bounds"
                    )
                if i and ids[i - 1] >= ids[i]:
                    raise StoreFormatError(f"{self.path}: index not strictly sorted")
        except (StoreFormatError, struct.error) as exc:
            buf.release()
            self._mm.close()
            self._file.close()
            if isinstance(exc, struct.error):
                raise StoreFormatError(f"{self.path}: truncated index") from exc
            raise
        self._ids = ids
        self._offsets = offsets
        self._lengths = lengths
        self._buf = buf
        self._decoded = 0
        self._lock = threading.Lock()

    @property
    def record_count(self) -> int:
        return len(self._ids)

    @property
    def materialized_counter(self) -> int:
        with self._lock:
            return self._decoded

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, record_id: bytes) -> bool:
        i = bisect_left(self._ids, record_id)
        return i < len(self._ids) and self._ids[i] == record_id

    def ids(self) -> list[bytes]:
        """All IDs in ascending order; does not decode any payload."""
        return list(self._ids)

    def _decode_at(self, i: int) -> TextRecord:
        start = self._payload_start + self._offsets[i]
        view = self._buf[start : start + self._lengths[i]]
        pos = 0
        has_title = view[0]
        pos = 1
        title = None
        if has_title:
            (tlen,) = _U32.unpack_from(view, pos)
            pos += 4
            title = bytes(view[pos : pos + tlen]).decode("utf-8")
            pos += tlen
        (xlen,) = _U32.unpack_from(view, pos)
        pos += 4
        text = bytes(view[pos : pos + xlen]).decode("utf-8")
        with self._lock:
            self._decoded += 1
        return TextRecord(id=self._ids[i], title=title, text=text)

    def get(self, record_id: bytes) -> TextRecord:
        """Decode exactly one record; raises ``NotFoundError`` on miss."""
        i = bisect_left(self._ids, record_id)
        if i >= len(self._ids) or self._ids[i] != record_id:
            raise NotFoundError(record_id)
        return self._decode_at(i)

    def get_optional(self, record_id: bytes) -> TextRecord | None:
        try:
            return self.get(record_id)
        except NotFoundError:
            return None

    def iter_records(self) -> Iterator[TextRecord]:
        """Decode every record in ID order (bumps the counter per record)."""
        for i in range(len(self._ids)):
            yield self._decode_at(i)

    def close(self) -> None:
        self._buf.release()
        self._mm.close()
        self._file.close()

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_store(path: Path) -> StoreHandle:
    return StoreHandle(path)


# ---------------------------------------------------------------------------
# fingerprint-keyed artifact cache


def cache_lookup(fp: Fingerprint, cache_dir: Path) -> Path | None:
    """Path of a complete cached artifact, or None.

    An entry is a hit only when both the artifact and its ``.ok`` marker exist
    and the marker records the artifact's exact byte size.  Corrupt or partial
    entries are deleted and reported as misses.
    """
    cache_dir = Path(cache_dir)
    artifact = cache_dir / fp.hex
    marker = cache_dir / f"{fp.hex}.ok"
    if artifact.exists() and marker.exists():
        try:
            expected = int(marker.read_text())
            if artifact.stat().st_size == expected:
                return artifact
        except (ValueError, OSError):
            pass
    for stale in (artifact, marker):
        try:
            stale.unlink(missing_ok=True)
        except OSError:
            pass
    return None


def cache_publish(fp: Fingerprint, cache_dir: Path, src_path: Path) -> Path:
    """Move a finished artifact into the cache and mark it complete."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    artifact = cache_dir / fp.hex
    os.replace(src_path, artifact)
    atomic_write(cache_dir / f"{fp.hex}.ok", str(artifact.stat().st_size).encode())
    return artifact


def cached_store_from_jsonl(jsonl_path: Path, cache_dir: Path) -> tuple[StoreHandle, bool]:
    """Open the store for a JSONL file, building it at most once per content."""
    jsonl_path = Path(jsonl_path)
    fp = fingerprint_paths([jsonl_path], {"stage": "store", "version": VERSION})

    def build(tmp: Path) -> None:
        writer = StoreWriter(tmp)
        try:
            for rec in _parse_jsonl_records(jsonl_path):
                writer.add_record(rec)
        except BaseException:
            writer.abort()
            raise
        writer.finalize()

    artifact, hit = cached_build(fp, cache_dir, build)
    return open_store(artifact), hit


def cached_build(
    fp: Fingerprint, cache_dir: Path, build: Callable[[Path], None]
) -> tuple[Path, bool]:
    """Return ``(artifact_path, was_hit)``, building under a directory lock.

    ``build`` receives a temp path inside the cache dir and must write the
    complete artifact there; it is published atomically afterwards.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    hit = cache_lookup(fp, cache_dir)
    if hit is not None:
        return hit, True
    with FileLock(cache_dir / ".lock"):
        hit = cache_lookup(fp, cache_dir)
        if hit is not None:
            return hit, True
        fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=f".{fp.hex}.build.")
        os.close(fd)
        tmp = Path(tmp)
        try:
            build(tmp)
            return cache_publish(fp, cache_dir, tmp), False
        except BaseException:
            tmp.unlink(missing_ok=True)
            raise
