"""SMAP: the binary container for ground-truth and saliency maps.

Layout (little-endian)::

    b"SMAP" | u16 version=1 | u32 height | u32 width | f32[height*width] | u32 crc32

The CRC covers every preceding byte.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, WeightFormatError

MAGIC = b"SMAP"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


def encode(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"SMAP holds 2-D maps, got shape {arr.shape}")
    h, w = arr.shape
    body = _HEADER.pack(MAGIC, VERSION, h, w) + arr.astype("<f4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size + 4:
        raise ChecksumError("SMAP data truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"bad SMAP magic {buf[:4]!r}")
    if zlib.crc32(body) != crc:
        raise ChecksumError("SMAP checksum mismatch")
    _, version, h, w = _HEADER.unpack_from(body)
    if version != VERSION:
        raise WeightFormatError(f"unsupported SMAP version {version}")
    if len(body) != _HEADER.size + 4 * h * w:
        raise WeightFormatError("SMAP payload length does not match its header")
    return np.frombuffer(body, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)


def write_smap(path, arr) -> None:
    Path(path).write_bytes(encode(arr))


def read_smap(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
