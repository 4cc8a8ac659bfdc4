"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic        8 bytes   b"CXHCKPT\\x00"
    version      u32       currently 1
    variant      u16 length + UTF-8 bytes
    config       u32 length + UTF-8 JSON document (sorted keys, indented)
    n_params     u32
    per parameter, in model order:
        name     u16 length + UTF-8 bytes
        ndim     u8
        dims     ndim x u32
        values   prod(dims) x float64 (little-endian, row-major)

Values are stored as raw IEEE doubles, so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"CXHCKPT\x00"
VERSION = 1


def _write_str(buf, s: str, fmt: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack(fmt, len(raw)))
    buf.write(raw)


def _read_exact(buf, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise DataError("checkpoint truncated")
    return raw


def _read_str(buf, fmt: str) -> str:
    (n,) = struct.unpack(fmt, _read_exact(buf, struct.calcsize(fmt)))
    return _read_exact(buf, n).decode("utf-8")


def dumps(variant: str, config: dict, params: "OrderedDict[str, np.ndarray]") -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_str(buf, variant, "<H")
    _write_str(buf, json.dumps(config, sort_keys=True, indent=2), "<I")
    buf.write(struct.pack("<I", len(params)))
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        _write_str(buf, name, "<H")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[str, dict, "OrderedDict[str, np.ndarray]"]:
    buf = io.BytesIO(data)
    if _read_exact(buf, len(MAGIC)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    variant = _read_str(buf, "<H")
    config = json.loads(_read_str(buf, "<I"))
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n):
        name = _read_str(buf, "<H")
        (ndim,) = struct.unpack("<B", _read_exact(buf, 1))
        dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").astype(np.float64)
        params[name] = arr.reshape(dims)
    if buf.read(1):
        raise DataError("trailing bytes after checkpoint payload")
    return variant, config, params


def save(path, variant: str, config: dict, params) -> None:
    Path(path).write_bytes(dumps(variant, config, params))


def load(path):
    return loads(Path(path).read_bytes())
