"""Weight archive format: round trips and schema validation."""

import json
import struct

import numpy as np
import pytest

from crnsynth.archive import load_archive, save_archive
from crnsynth.errors import SchemaError


def _tensors(rng):
    return {"a.weight": rng.standard_normal((3, 3, 2, 4)).astype(np.float32),
            "a.bias": rng.standard_normal(4).astype(np.float32),
            "b.gain": rng.standard_normal(7).astype(np.float32)}


@pytest.mark.parametrize("name", ["arch.wts", "archdir"])
def test_round_trip_bit_exact(tmp_path, rng, name):
    tensors = _tensors(rng)
    header = {"kind": "cascade", "step": 12, "seed": 3, "config": {"x": 1}}
    path = tmp_path / name
    save_archive(path, tensors, header)
    loaded, got_header = load_archive(path)
    assert got_header == header
    assert list(loaded) == list(tensors)
    for k in tensors:
        assert loaded[k].dtype == np.float32
        assert loaded[k].tobytes() == tensors[k].tobytes()


def test_manifest_schema(tmp_path, rng):
    path = save_archive(tmp_path / "a.wts", _tensors(rng))
    raw = path.read_bytes()
    (mlen,) = struct.unpack("<Q", raw[:8])
    manifest = json.loads(raw[8:8 + mlen])
    for entry in manifest["tensors"]:
        assert set(entry) == {"name", "shape", "dtype", "byte_offset"}
        assert entry["dtype"] == "f32"
    offsets = [e["byte_offset"] for e in manifest["tensors"]]
    assert offsets == sorted(offsets) and offsets[0] == 0


def test_rejects_non_f32(tmp_path):
    with pytest.raises(SchemaError):
        save_archive(tmp_path / "bad.wts", {"x": np.zeros(3, dtype=np.float64)})


def test_rejects_truncated_blob(tmp_path, rng):
    path = save_archive(tmp_path / "t.wts", _tensors(rng))
    raw = path.read_bytes()
    (tmp_path / "trunc.wts").write_bytes(raw[:-8])
    with pytest.raises(SchemaError, match="overruns"):
        load_archive(tmp_path / "trunc.wts")


def test_rejects_bad_dtype_entry(tmp_path):
    manifest = {"header": {}, "tensors": [
        {"name": "x", "shape": [2], "dtype": "f64", "byte_offset": 0}]}
    d = tmp_path / "arch"
    d.mkdir()
    (d / "manifest.json").write_text(json.dumps(manifest))
    (d / "weights.bin").write_bytes(b"\0" * 16)
    with pytest.raises(SchemaError, match="f64"):
        load_archive(d)
