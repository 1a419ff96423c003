"""TNSR1 binary tensor format.

Layout, all little-endian:

    magic   4 bytes  b"TNSR"
    version u8       1
    rank    u8
    extents rank x u32
    payload row-major f64

Used by every dump/load surface (CLI outputs, checkpoints, feature dumps).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .tensor import Tensor

MAGIC = b"TNSR"
VERSION = 1


def dump_tensor(t: Tensor | np.ndarray) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if arr.ndim > 255:
        raise ValidationError(f"rank {arr.ndim} exceeds the u8 rank field")
    for extent in arr.shape:
        if extent > 0xFFFFFFFF:
            raise ValidationError(f"extent {extent} exceeds the u32 extent field")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return header + payload


def load_tensor(data: bytes) -> np.ndarray:
    if len(data) < 6:
        raise ParseError("TNSR1 data truncated before header")
    if data[:4] != MAGIC:
        raise ParseError(f"bad TNSR1 magic {data[:4]!r}")
    version, rank = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported TNSR1 version {version}")
    offset = 6
    if len(data) < offset + 4 * rank:
        raise ParseError("TNSR1 data truncated in extents")
    shape = struct.unpack_from(f"<{rank}I", data, offset)
    offset += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    expected = offset + 8 * count
    if len(data) != expected:
        raise ParseError(f"TNSR1 payload length {len(data) - offset} != {8 * count}")
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return arr.reshape(shape).astype(np.float64)


def write_tensor(path: str | Path, t: Tensor | np.ndarray) -> None:
    Path(path).write_bytes(dump_tensor(t))


def read_tensor(path: str | Path) -> np.ndarray:
    return load_tensor(Path(path).read_bytes())
