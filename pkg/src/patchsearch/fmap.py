"""FMAP: little-endian binary interchange format for feature tensors.

Layout:

    magic   4 bytes  b"FMAP"
    version u32      1
    n       u32      tensor count
    tensor records (n times):
        stage u8, C u16, H u16, W u16, then C*H*W float32, row-major
    crc     u32      CRC32 (zlib) of all tensor-record bytes

The CRC covers exactly the bytes between the 12-byte header and the
4-byte trailer. Everything is little-endian.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"FMAP"
VERSION = 1

_HEADER = struct.Struct("<4sII")
_TENSOR_HEADER = struct.Struct("<BHHH")


class FmapError(ValueError):
    pass


def dumps(tensors) -> bytes:
    """Serialize [(stage, (C, H, W) array), ...] to FMAP bytes."""
    records = []
    for stage, data in tensors:
        arr = np.ascontiguousarray(data, dtype="<f4")
        if arr.ndim != 3:
            raise FmapError(f"tensor must be (C, H, W), got shape {arr.shape}")
        c, h, w = arr.shape
        if not 0 <= stage <= 255:
            raise FmapError(f"stage {stage} out of range")
        if max(c, h, w) > 0xFFFF:
            raise FmapError(f"dimension too large for u16: {arr.shape}")
        records.append(_TENSOR_HEADER.pack(stage, c, h, w) + arr.tobytes())
    payload = b"".join(records)
    header = _HEADER.pack(MAGIC, VERSION, len(records))
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def loads(blob: bytes):
    """Parse FMAP bytes into [(stage, float32 array), ...]; verifies the CRC."""
    if len(blob) < _HEADER.size + 4:
        raise FmapError("truncated FMAP blob")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FmapError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FmapError(f"unsupported version {version}")
    payload = blob[_HEADER.size : -4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) != crc:
        raise FmapError("CRC mismatch")
    tensors = []
    offset = 0
    for _ in range(count):
        if offset + _TENSOR_HEADER.size > len(payload):
            raise FmapError("truncated tensor record")
        stage, c, h, w = _TENSOR_HEADER.unpack_from(payload, offset)
        offset += _TENSOR_HEADER.size
        nbytes = c * h * w * 4
        if offset + nbytes > len(payload):
            raise FmapError("truncated tensor data")
        data = np.frombuffer(payload, dtype="<f4", count=c * h * w, offset=offset)
        tensors.append((stage, data.reshape(c, h, w).copy()))
        offset += nbytes
    if offset != len(payload):
        raise FmapError("trailing bytes after last tensor")
    return tensors


def write(path, tensors) -> None:
    Path(path).write_bytes(dumps(tensors))


def read(path):
    return loads(Path(path).read_bytes())
