"""Binary vector store: a persistent map from trace keys to fixed-dimension vectors.

File layout (all integers little-endian):

    magic      4 bytes  b"DTVS"
    version    u16      currently 1
    dimension  u32
    count      u64
    provenance u32 length + UTF-8 bytes
    records    count times:
        key    u16 length + UTF-8 bytes ("report_id#trace_index")
        values dimension x float32

Keys are written in sorted order, so stores with equal content are
byte-identical. This format is the handoff contract with external encoders;
change it only with a version bump.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DTVS"
VERSION = 1


class StoreFormatError(ValueError):
    pass


class VectorStore:
    def __init__(self, dimension: int, provenance: str = ""):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.provenance = provenance
        self.entries: dict[str, np.ndarray] = {}

    def put(self, key: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dimension,):
            raise ValueError(f"vector for {key!r} has shape {vec.shape}, "
                             f"store dimension is {self.dimension}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"vector for {key!r} has non-finite entries")
        self.entries[key] = vec

    def get(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(f"no embedding cached for key {key!r}") from None

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorStore):
            return NotImplemented
        return (self.dimension == other.dimension
                and self.provenance == other.provenance
                and self.entries.keys() == other.entries.keys()
                and all(np.array_equal(v, other.entries[k])
                        for k, v in self.entries.items()))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            prov = self.provenance.encode("utf-8")
            fh.write(MAGIC)
            fh.write(struct.pack("<HIQ", VERSION, self.dimension, len(self.entries)))
            fh.write(struct.pack("<I", len(prov)))
            fh.write(prov)
            for key in sorted(self.entries):
                kb = key.encode("utf-8")
                fh.write(struct.pack("<H", len(kb)))
                fh.write(kb)
                fh.write(self.entries[key].astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "VectorStore":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise StoreFormatError(f"{path}: bad magic {data[:4]!r}")
        try:
            version, dimension, count = struct.unpack_from("<HIQ", data, 4)
            if version != VERSION:
                raise StoreFormatError(f"{path}: unsupported version {version}")
            offset = 4 + 14
            (prov_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            provenance = data[offset:offset + prov_len].decode("utf-8")
            if len(data) < offset + prov_len:
                raise StoreFormatError(f"{path}: truncated provenance")
            offset += prov_len
            store = cls(dimension=dimension, provenance=provenance)
            rec_bytes = 4 * dimension
            for _ in range(count):
                (key_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                key = data[offset:offset + key_len].decode("utf-8")
                offset += key_len
                if len(data) < offset + rec_bytes:
                    raise StoreFormatError(f"{path}: truncated record for {key!r}")
                vec = np.frombuffer(data, dtype="<f4", count=dimension, offset=offset)
                offset += rec_bytes
                store.entries[key] = vec.copy()
        except struct.error as exc:
            raise StoreFormatError(f"{path}: truncated header ({exc})") from exc
        if offset != len(data):
            raise StoreFormatError(f"{path}: {len(data) - offset} trailing bytes")
        return store
