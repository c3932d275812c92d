"""Versioned little-endian array container used for model and controller caches.

Layout::

    magic     4 bytes   b"NCSA" (symbolic model) or b"NCSC" (controller)
    version   uint32 LE
    hlen      uint32 LE  length of the JSON header in bytes
    header    UTF-8 JSON: {"meta": {...}, "arrays": [[name, dtype, shape], ...]}
    payload   the arrays' raw little-endian bytes, concatenated in header order
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def write_container(path, magic: bytes, meta: dict, arrays: dict) -> None:
    specs, blobs = [], []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        specs.append([name, a.dtype.str, list(a.shape)])
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path, magic: bytes) -> tuple:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise ValueError(f"{path}: not a {magic.decode()} file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(data[12:12 + hlen])
    offset = 12 + hlen
    arrays = {}
    for name, dtype, shape in header["arrays"]:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dt, count, offset).reshape(shape).copy()
        offset += count * dt.itemsize
    return header["meta"], arrays


def content_hash(*parts) -> str:
    """Stable hash of JSON-serialisable parts; used as a cache key."""
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=repr).encode())
    return h.hexdigest()[:20]
