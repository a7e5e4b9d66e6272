"""Deterministic, seekable payloads and their SHA-256 digests.

Object bytes are the little-endian concatenation of 64-bit blocks
``mix64(seed + (k+1) * 0x9E3779B97F4A7C15)`` for k = 0, 1, 2, ...,
truncated to the object size. Any byte range can be produced without
replaying the stream, which is what lets the mock origin honor Range
requests in synthetic mode.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .errors import FedbenchError, IntegrityError, ValidationError
from .model import SizeClass, classify_size

CHUNK_BYTES = 4 * 2**20
MASK64 = (1 << 64) - 1
EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
MANIFEST_NAME = "manifest.json"


def payload_block(seed: int, k: int) -> int:
    """Block ``k`` of the stream for ``seed``, as a Python int."""
    out = np.empty(1, dtype=np.uint64)
    _kernels.fill_blocks(seed & MASK64, k & MASK64, out)
    return int(out[0])


def read_range(seed: int, offset: int, length: int) -> bytes:
    """Bytes ``[offset, offset+length)`` of the stream for ``seed``."""
    if offset < 0 or length < 0:
        raise ValidationError("offset and length must be non-negative")
    if length == 0:
        return b""
    first = offset // 8
    last = (offset + length - 1) // 8
    blocks = np.empty(last - first + 1, dtype="<u8")
    _kernels.fill_blocks(seed & MASK64, first, blocks)
    skip = offset - first * 8
    return blocks.view(np.uint8)[skip:skip + length].tobytes()


def iter_chunks(seed: int, size_bytes: int, offset: int = 0, chunk_bytes: int = CHUNK_BYTES) -> Iterator[bytes]:
    """Yield the object's bytes from ``offset`` to ``size_bytes`` in bounded chunks."""
    # Chunk starts stay 8-aligned so each chunk maps to whole blocks.
    chunk_bytes = max(8, chunk_bytes - chunk_bytes % 8)
    pos = offset
    while pos < size_bytes:
        step = min(chunk_bytes - pos % 8, size_bytes - pos)
        yield read_range(seed, pos, step)
        pos += step


def object_digest(seed: int, size_bytes: int) -> str:
    """SHA-256 hex of the first ``size_bytes`` bytes of the stream."""
    if size_bytes < 0:
        raise ValidationError("size_bytes must be non-negative", field="size_bytes")
    h = hashlib.sha256()
    for chunk in iter_chunks(seed, size_bytes):
        h.update(chunk)
    return h.hexdigest()


def file_digest(path: str | os.PathLike, chunk_bytes: int = CHUNK_BYTES) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            buf = f.read(chunk_bytes)
            if not buf:
                break
            h.update(buf)
    return h.hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    object_name: str
    size_bytes: int
    seed: int
    sha256_hex: str

    def to_dict(self):
        return {
            "object_name": self.object_name,
            "size_bytes": self.size_bytes,
            "seed": self.seed,
            "sha256_hex": self.sha256_hex,
        }


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __post_init__(self):
        names = [e.object_name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate object_name in manifest", field="object_name")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, name: str) -> ManifestEntry | None:
        for e in self.entries:
            if e.object_name == name:
                return e
        return None

    def for_size(self, size: SizeClass) -> ManifestEntry | None:
        return self.get(size.object_name)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        raw = json.loads(text)
        if not isinstance(raw, list):
            raise ValidationError("manifest must be a JSON array")
        entries = []
        for i, item in enumerate(raw):
            if set(item) != {"object_name", "size_bytes", "seed", "sha256_hex"}:
                raise ValidationError(f"manifest entry {i} has fields {sorted(item)}")
            entries.append(ManifestEntry(**item))
        return cls(tuple(entries))

    def write(self, directory: str | os.PathLike) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls.from_json(path.read_text())


def synthetic_manifest(profile: Iterable[SizeClass | str], seed: int = 0) -> CorpusManifest:
    """Manifest for a corpus that is never written to disk."""
    entries = []
    for size in profile:
        size = classify_size(size)
        entries.append(ManifestEntry(size.object_name, size.bytes, seed, object_digest(seed, size.bytes)))
    return CorpusManifest(tuple(entries))


def write_object(path: str | os.PathLike, seed: int, size_bytes: int) -> str:
    """Stream one object to ``path``; return its digest."""
    h = hashlib.sha256()
    tmp = Path(f"{path}.part")
    try:
        with open(tmp, "wb") as f:
            for chunk in iter_chunks(seed, size_bytes):
                h.update(chunk)
                f.write(chunk)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise FedbenchError(f"cannot write {path}: {exc}") from exc
    return h.hexdigest()


def materialize_corpus(profile: Iterable[SizeClass | str], directory: str | os.PathLike,
                       seed: int = 0) -> CorpusManifest:
    """Write ``obj_<label>.bin`` per size class plus ``manifest.json``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FedbenchError(f"cannot create {directory}: {exc}") from exc
    entries = []
    for size in profile:
        size = classify_size(size)
        digest = write_object(directory / size.object_name, seed, size.bytes)
        entries.append(ManifestEntry(size.object_name, size.bytes, seed, digest))
    manifest = CorpusManifest(tuple(entries))
    try:
        manifest.write(directory)
    except OSError as exc:
        raise FedbenchError(f"cannot write manifest in {directory}: {exc}") from exc
    return manifest


def verify_corpus(directory: str | os.PathLike, manifest: CorpusManifest | None = None) -> None:
    """Re-hash every file and compare with the manifest and the generator."""
    directory = Path(directory)
    manifest = manifest or CorpusManifest.load(directory)
    for e in manifest:
        if e.sha256_hex != object_digest(e.seed, e.size_bytes):
            raise IntegrityError(f"{e.object_name}: manifest digest not derivable from (seed, size)")
        actual = file_digest(directory / e.object_name)
        if actual != e.sha256_hex:
            raise IntegrityError(f"{directory / e.object_name}: digest {actual} != manifest {e.sha256_hex}")
