"""GGT1 tensor files.

Layout: magic ``b"GGT1"``, little-endian u32 rank, ``rank`` u32 extents,
then float32 little-endian values in row-major order.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"GGT1"


def encode(array):
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(buf, offset=0):
    """Parse one record starting at ``offset``; returns ``(array, end_offset)``."""
    mv = memoryview(buf)
    if bytes(mv[offset:offset + 4]) != MAGIC:
        raise FormatError(f"bad magic {bytes(mv[offset:offset + 4])!r}, expected {MAGIC!r}")
    pos = offset + 4
    if len(mv) < pos + 4:
        raise FormatError("truncated header")
    (rank,) = struct.unpack_from("<I", mv, pos)
    pos += 4
    if len(mv) < pos + 4 * rank:
        raise FormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}I", mv, pos)
    pos += 4 * rank
    if rank == 0 or any(s < 1 for s in shape):
        raise FormatError(f"invalid shape {shape}")
    count = int(np.prod(shape, dtype=np.int64))
    end = pos + 4 * count
    if len(mv) < end:
        raise FormatError(f"truncated payload: need {4 * count} bytes")
    data = np.frombuffer(mv[pos:end], dtype="<f4").reshape(shape).astype(np.float32)
    return data, end


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor")
    return arr
