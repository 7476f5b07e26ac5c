"""MNET weight files.

Layout (little-endian)::

    b"MNET" | u16 version=1 | u16 n_layers
    n_layers x ( u8 kind | u32 hyperparameters... | f32 parameters... )
    u8 head | u32 channels | u32 height | u32 width
    u32 crc32 of everything before it

Hyperparameters per kind: conv ``out, in, kernel, stride, padding``; dense
``out, in``; maxpool ``kernel, stride``; relu and flatten have none.  Conv
and dense layers then store weights followed by biases, row-major.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, WeightFormatError
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .network import HEADS, Network

MAGIC = b"MNET"
VERSION = 1
TAGS = {"conv": 1, "dense": 2, "relu": 3, "maxpool": 4, "flatten": 5}
_KINDS = {v: k for k, v in TAGS.items()}
_N_HYPER = {"conv": 5, "dense": 2, "relu": 0, "maxpool": 2, "flatten": 0}


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def encode(net: Network) -> bytes:
    parts = [struct.pack("<4sHH", MAGIC, VERSION, len(net.layers))]
    for layer in net.layers:
        parts.append(struct.pack("<B", TAGS[layer.kind]))
        if isinstance(layer, Conv2D):
            o, i, k, _ = layer.weight.shape
            parts.append(struct.pack("<5I", o, i, k, layer.stride, layer.padding))
            parts += [_f32(layer.weight), _f32(layer.bias)]
        elif isinstance(layer, Dense):
            parts.append(struct.pack("<2I", *layer.weight.shape))
            parts += [_f32(layer.weight), _f32(layer.bias)]
        elif isinstance(layer, MaxPool2D):
            parts.append(struct.pack("<2I", layer.kernel, layer.stride))
    c, h, w = net.input_shape
    parts.append(struct.pack("<B3I", HEADS.index(net.head), c, h, w))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise WeightFormatError("weight file ends inside a record")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        if self.pos + 4 * n > len(self.buf):
            raise WeightFormatError("weight file ends inside a parameter tensor")
        a = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.pos).reshape(shape)
        self.pos += 4 * n
        return a.astype(np.float32)


def decode(buf: bytes) -> Network:
    if len(buf) < 12:
        raise ChecksumError("weight file truncated")
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {buf[:4]!r}, not an MNET file")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("weight file checksum mismatch (corrupt or truncated)")
    r = _Reader(body)
    _, version, n_layers = r.take("<4sHH")
    if version != VERSION:
        raise WeightFormatError(f"unsupported MNET version {version}")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.take("<B")
        kind = _KINDS.get(tag)
        if kind is None:
            raise WeightFormatError(f"unknown layer tag {tag}")
        hyper = r.take(f"<{_N_HYPER[kind]}I")
        if kind == "conv":
            o, i, k, stride, padding = hyper
            layers.append(Conv2D(r.floats((o, i, k, k)), r.floats((o,)), stride, padding))
        elif kind == "dense":
            o, i = hyper
            layers.append(Dense(r.floats((o, i)), r.floats((o,))))
        elif kind == "maxpool":
            layers.append(MaxPool2D(*hyper))
        elif kind == "relu":
            layers.append(ReLU())
        else:
            layers.append(Flatten())
    head, c, h, w = r.take("<B3I")
    if head >= len(HEADS):
        raise WeightFormatError(f"unknown head tag {head}")
    if r.pos != len(body):
        raise WeightFormatError("trailing bytes after the head record")
    try:
        return Network(tuple(layers), (c, h, w), HEADS[head])
    except ValueError as exc:
        raise WeightFormatError(f"inconsistent architecture: {exc}") from None


def save_weights(net: Network, path) -> None:
    Path(path).write_bytes(encode(net))


def load_weights(path) -> Network:
    return decode(Path(path).read_bytes())
