"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"RRLC" | u32 version | u8 precision (32 or 64) | u32 record count
    per record: u32 name length | name (utf-8) | u32 rank | u32 dims[rank] | raw data

Raw data is little-endian float32 or float64 according to the precision flag.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RRLC"
VERSION = 1
_HEADER = struct.Struct("<4sIBI")
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _dtype(precision: int) -> np.dtype:
    if precision == 32:
        return np.dtype("<f4")
    if precision == 64:
        return np.dtype("<f8")
    raise CheckpointError(f"unsupported precision flag {precision}")


def dumps(params: dict, precision: int) -> bytes:
    dt = _dtype(precision)
    parts = [_HEADER.pack(MAGIC, VERSION, precision, len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype=dt)
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict, int]:
    """Decode a checkpoint; returns ``(params, precision)``."""
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint truncated in header")
    magic, version, precision, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    dt = _dtype(precision)
    pos = _HEADER.size

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("checkpoint truncated")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    params = {}
    for _ in range(count):
        (name_len,) = _U32.unpack(take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("parameter name is not valid utf-8") from None
        if name in params:
            raise CheckpointError(f"duplicate parameter {name!r}")
        (rank,) = _U32.unpack(take(4))
        shape = tuple(_U32.unpack(take(4))[0] for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(take(size * dt.itemsize), dtype=dt).reshape(shape)
        params[name] = data.astype(dt.newbyteorder("="), copy=True)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last record")
    return params, precision


def save_checkpoint(path, params: dict, precision: int) -> None:
    Path(path).write_bytes(dumps(params, precision))


def load_checkpoint(path) -> tuple[dict, int]:
    return loads(Path(path).read_bytes())
