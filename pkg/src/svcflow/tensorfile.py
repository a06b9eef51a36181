"""Single-file named-tensor container.

Layout (all integers little-endian)::

    b"DAFM"  u16 version  u32 n_tensors
    per tensor: u16 name_len, name (utf-8), u8 dtype (0=f32, 1=f64),
                u8 rank, rank x u64 dims, row-major payload
    u64 meta_len, JSON metadata (utf-8)

Metadata is serialised with sorted keys so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"DAFM"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dumps(tensors: dict, metadata: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
                arr = arr.astype(np.float64)
            else:
                raise SchemaError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta)) + meta)
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict, dict]:
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise SchemaError("not a tensor file (bad magic)")
    pos = 4
    try:
        version, count = struct.unpack_from("<HI", view, pos)
        pos += 6
        if version != VERSION:
            raise SchemaError(f"unsupported tensor file version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            code, rank = struct.unpack_from("<BB", view, pos)
            pos += 2
            if code not in _DTYPES:
                raise SchemaError(f"tensor {name!r}: unknown dtype code {code}")
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(view):
                raise SchemaError(f"tensor {name!r}: payload truncated")
            arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape)
            tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
            pos += nbytes
        (meta_len,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        metadata = json.loads(bytes(view[pos:pos + meta_len]).decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"corrupt tensor file: {exc}") from exc
    return tensors, metadata


def save(path, tensors: dict, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path) -> tuple[dict, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    return loads(blob)
