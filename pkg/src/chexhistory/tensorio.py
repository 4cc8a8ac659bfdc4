"""Keyed binary tensor files (images, precomputed features).

A tensor file is a concatenation of records::

    magic    4 bytes  b"CXTN"
    dtype    u8       1 = float32, 2 = float64
    ndim     u8
    dims     ndim x u32 (little-endian)
    values   prod(dims) little-endian floats, row-major

The adjacent index file ``<name>.index.json`` is a JSON object mapping each
key (the scan path) to the byte offset of its record. Keys are written sorted.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"CXTN"
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
TAG_OF = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def index_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".index.json")


def encode_record(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = TAG_OF.get(arr.dtype)
    if tag is None:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    head = MAGIC + struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag]).tobytes()


def decode_record(buf: bytes | memoryview, offset: int) -> np.ndarray:
    if bytes(buf[offset:offset + 4]) != MAGIC:
        raise DataError(f"bad tensor record magic at offset {offset}")
    tag, ndim = struct.unpack_from("<BB", buf, offset + 4)
    if tag not in DTYPE_TAGS:
        raise DataError(f"unknown dtype tag {tag} at offset {offset}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset + 6)
    start = offset + 6 + 4 * ndim
    dt = DTYPE_TAGS[tag]
    count = int(np.prod(dims)) if ndim else 1
    end = start + count * dt.itemsize
    if end > len(buf):
        raise DataError(f"tensor record at offset {offset} is truncated")
    return np.frombuffer(buf[start:end], dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write all ``tensors`` (in sorted key order) plus the index file."""
    path = Path(path)
    index = {}
    offset = 0
    with open(path, "wb") as fh:
        for key in sorted(tensors):
            rec = encode_record(tensors[key])
            index[key] = offset
            fh.write(rec)
            offset += len(rec)
    index_path(path).write_text(json.dumps(index, sort_keys=True, indent=0) + "\n")


class TensorStore:
    """Read-only random access to a tensor file by key."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self._buf = self.path.read_bytes()
            self.index: dict[str, int] = json.loads(index_path(self.path).read_text())
        except FileNotFoundError as e:
            raise DataError(f"missing tensor file or index: {e.filename}") from e

    def __contains__(self, key: str) -> bool:
        return key in self.index

    def __len__(self) -> int:
        return len(self.index)

    def keys(self):
        return self.index.keys()

    def get(self, key: str) -> np.ndarray:
        try:
            off = self.index[key]
        except KeyError:
            raise DataError(f"no tensor stored for key {key!r} in {self.path}") from None
        return decode_record(self._buf, off)

    __getitem__ = get
