"""Weight archive: JSON manifest plus a flat little-endian float32 blob.

Two containers, one format:

* directory with ``manifest.json`` and ``weights.bin``
* single file: 8-byte little-endian manifest length, manifest JSON
  (utf-8), then the blob

The manifest is ``{"header": {...}, "tensors": [{"name", "shape",
"dtype": "f32", "byte_offset"}, ...]}``. Tensors round-trip bit-exactly.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

_MANIFEST = "manifest.json"
_BLOB = "weights.bin"


def _build_manifest(tensors, header):
    entries = []
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise SchemaError(f"archive tensors must be float32, {name!r} is {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                        "byte_offset": offset})
        offset += arr.nbytes
    return {"header": header or {}, "tensors": entries}, offset


def _blob_bytes(tensors):
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors.values())


def save_archive(path, tensors, header=None):
    """Writes tensors (ordered name->float32 array dict) to ``path``.

    A path with a suffix is written as a single file, otherwise as a
    directory.
    """
    path = Path(path)
    manifest, _ = _build_manifest(tensors, header)
    manifest_bytes = json.dumps(manifest, indent=1, sort_keys=True).encode()
    blob = _blob_bytes(tensors)
    if path.suffix:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(manifest_bytes)))
            fh.write(manifest_bytes)
            fh.write(blob)
    else:
        path.mkdir(parents=True, exist_ok=True)
        (path / _MANIFEST).write_bytes(manifest_bytes)
        (path / _BLOB).write_bytes(blob)
    return path


def load_archive(path):
    """Returns (tensors, header); tensors keep manifest order."""
    path = Path(path)
    if path.is_dir():
        manifest_bytes = (path / _MANIFEST).read_bytes()
        blob = (path / _BLOB).read_bytes()
    else:
        raw = path.read_bytes()
        if len(raw) < 8:
            raise SchemaError(f"{path} is too short to be a weight archive")
        (mlen,) = struct.unpack("<Q", raw[:8])
        if 8 + mlen > len(raw):
            raise SchemaError(f"{path}: manifest length {mlen} exceeds file size")
        manifest_bytes = raw[8:8 + mlen]
        blob = raw[8 + mlen:]
    try:
        manifest = json.loads(manifest_bytes)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise SchemaError(f"{path}: manifest lacks a 'tensors' list")
    tensors = {}
    for entry in manifest["tensors"]:
        missing = {"name", "shape", "dtype", "byte_offset"} - set(entry)
        if missing:
            raise SchemaError(f"{path}: tensor entry missing keys {sorted(missing)}")
        if entry["dtype"] != "f32":
            raise SchemaError(f"{path}: tensor {entry['name']!r} has dtype "
                              f"{entry['dtype']!r}, only 'f32' is supported")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if end > len(blob):
            raise SchemaError(f"{path}: tensor {entry['name']!r} overruns the blob")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        tensors[entry["name"]] = arr
    return tensors, manifest.get("header", {})
