import struct

import numpy as np
import pytest

from tracedup.store import MAGIC, VERSION, StoreFormatError, VectorStore


def make_store(dim=4, count=3, provenance="unit-test"):
    store = VectorStore(dimension=dim, provenance=provenance)
    rng = np.random.default_rng(0)
    for i in range(count):
        store.put(f"r{i}#0", rng.standard_normal(dim).astype(np.float32))
    return store


def test_round_trip_identity(tmp_path):
    store = make_store()
    path = tmp_path / "vectors.dtvs"
    store.save(path)
    assert VectorStore.load(path) == store


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "bad.dtvs"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(StoreFormatError, match="magic"):
        VectorStore.load(path)


def test_truncated_file_rejected(tmp_path):
    store = make_store()
    path = tmp_path / "vectors.dtvs"
    store.save(path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(StoreFormatError):
        VectorStore.load(path)


def test_trailing_bytes_rejected(tmp_path):
    store = make_store()
    path = tmp_path / "vectors.dtvs"
    store.save(path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(StoreFormatError, match="trailing"):
        VectorStore.load(path)


def test_file_size_matches_format_exactly(tmp_path):
    dim, count = 128, 1000
    provenance = "sizing-check"
    store = VectorStore(dimension=dim, provenance=provenance)
    keys = [f"report{i:05d}#0" for i in range(count)]
    vec = np.zeros(dim, dtype=np.float32)
    for key in keys:
        store.put(key, vec)
    path = tmp_path / "sized.dtvs"
    store.save(path)
    header = 4 + 2 + 4 + 8 + 4 + len(provenance.encode())
    records = sum(2 + len(k.encode()) + 4 * dim for k in keys)
    assert path.stat().st_size == header + records


def test_dimension_and_finiteness_validated():
    store = VectorStore(dimension=3)
    with pytest.raises(ValueError, match="shape"):
        store.put("a#0", [1.0, 2.0])
    with pytest.raises(ValueError, match="finite"):
        store.put("a#0", [1.0, float("nan"), 0.0])


def test_missing_key_error():
    store = VectorStore(dimension=2)
    with pytest.raises(KeyError, match="b#1"):
        store.get("b#1")


def test_save_is_key_order_independent(tmp_path):
    a = VectorStore(dimension=2)
    b = VectorStore(dimension=2)
    a.put("x#0", [1.0, 2.0])
    a.put("y#0", [3.0, 4.0])
    b.put("y#0", [3.0, 4.0])
    b.put("x#0", [1.0, 2.0])
    pa, pb = tmp_path / "a.dtvs", tmp_path / "b.dtvs"
    a.save(pa)
    b.save(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_header_layout_is_stable(tmp_path):
    store = VectorStore(dimension=1, provenance="p")
    store.put("k#0", [0.5])
    path = tmp_path / "one.dtvs"
    store.save(path)
    data = path.read_bytes()
    assert data[:4] == MAGIC
    version, dim, count = struct.unpack_from("<HIQ", data, 4)
    assert (version, dim, count) == (VERSION, 1, 1)
    (plen,) = struct.unpack_from("<I", data, 18)
    assert data[22:23] == b"p"
    (klen,) = struct.unpack_from("<H", data, 23)
    assert data[25:28] == b"k#0"
    assert struct.unpack_from("<f", data, 28)[0] == 0.5
