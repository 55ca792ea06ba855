"""Binary checkpoint container.

Layout (little-endian)::

    b"GFCK"  u16 version  u32 len  <len bytes of UTF-8 JSON>  u32 n_blobs
    n_blobs x [ u16 name_len  name  u8 dtype  u8 ndim  ndim x u32 dim  payload ]

dtype codes: 0 = f32, 1 = f64, 2 = i64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GFCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def dumps(meta: dict, blobs: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(head)), head, struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise CheckpointError(f"blob {name!r}: unsupported dtype {arr.dtype}")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack(f"<BB{arr.ndim}I", _CODES[dt], arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    try:
        version, n = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        pos = 10
        meta = json.loads(raw[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        blobs = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + klen].decode("utf-8")
            pos += 2 + klen
            code, ndim = struct.unpack_from("<BB", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 2)
            pos += 2 + 4 * ndim
            dt = _DTYPES[code]
            nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(raw):
                raise CheckpointError(f"blob {name!r} truncated")
            blobs[name] = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize,
                                        offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after last blob")
    return meta, blobs


def save(path, meta: dict, blobs: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(meta, blobs))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
