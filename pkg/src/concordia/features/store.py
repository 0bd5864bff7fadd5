"""Binary embedding store.

Layout (little-endian): b"EMB1", u32 version, u32 D, u64 count, then per
record u16 id length, id bytes (UTF-8), u32 gx, u32 gy, D x f32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass
class EmbeddingStore:
    dim: int
    specimen_ids: list = field(default_factory=list)
    coords: np.ndarray = None  # (n, 2) uint32 as (gx, gy)
    vectors: np.ndarray = None  # (n, D) float32

    def __post_init__(self):
        n = len(self.specimen_ids)
        if self.coords is None:
            self.coords = np.zeros((n, 2), np.uint32)
        if self.vectors is None:
            self.vectors = np.zeros((n, self.dim), np.float32)
        self.coords = np.asarray(self.coords, dtype=np.uint32).reshape(n, 2)
        self.vectors = np.asarray(self.vectors, dtype=np.float32).reshape(n, self.dim)
        if not np.isfinite(self.vectors).all():
            raise ValueError("non-finite embedding")

    def __len__(self):
        return len(self.specimen_ids)

    def to_bytes(self):
        parts = [_HEADER.pack(MAGIC, VERSION, self.dim, len(self))]
        vec = self.vectors.astype("<f4")
        for i, sid in enumerate(self.specimen_ids):
            raw = sid.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw)
            parts.append(struct.pack("<II", int(self.coords[i, 0]), int(self.coords[i, 1])))
            parts.append(vec[i].tobytes())
        return b"".join(parts)

    def write(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size:
            raise ValueError("truncated embedding store header")
        magic, version, dim, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC or version != VERSION:
            raise ValueError("not an EMB1 embedding store")
        pos = _HEADER.size
        ids = []
        coords = np.zeros((count, 2), np.uint32)
        vectors = np.zeros((count, dim), np.float32)
        for i in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            ids.append(data[pos : pos + ln].decode("utf-8"))
            pos += ln
            coords[i] = struct.unpack_from("<II", data, pos)
            pos += 8
            vectors[i] = np.frombuffer(data, "<f4", dim, pos)
            pos += 4 * dim
        if pos != len(data):
            raise ValueError("record count does not match header")
        return cls(dim, ids, coords, vectors)

    @classmethod
    def read(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def bags(self):
        """Group rows by specimen id, preserving first-seen order."""
        groups = {}
        for i, sid in enumerate(self.specimen_ids):
            groups.setdefault(sid, []).append(i)
        return {sid: self.vectors[idx] for sid, idx in groups.items()}
