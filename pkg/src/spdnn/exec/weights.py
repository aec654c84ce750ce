"""Binary weights file.

Layout, all integers little-endian u32::

    b"SPDW" | version=1 | tensor count
    per tensor: name length | UTF-8 name | ndim | dims... | float64 LE payload (row-major)
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..errors import WeightsFormatError

MAGIC = b"SPDW"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_weights(params: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise WeightsFormatError(f"truncated weights file while reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    if take(4, "magic") != MAGIC:
        raise WeightsFormatError("not a weights file (bad magic)")
    version = u32("version")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(u32("tensor count")):
        name = take(u32("name length"), "name").decode("utf-8")
        if name in params:
            raise WeightsFormatError(f"duplicate tensor {name!r}")
        dims = tuple(u32("dimension") for _ in range(u32("rank")))
        count = int(np.prod(dims, dtype=np.int64))
        payload = take(8 * count, f"payload of {name!r}")
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(data):
        raise WeightsFormatError(f"{len(data) - pos} trailing bytes after the last tensor")
    return params


def write_weights(fh: BinaryIO, params: dict[str, np.ndarray]) -> None:
    fh.write(encode_weights(params))


def read_weights(fh: BinaryIO) -> dict[str, np.ndarray]:
    return decode_weights(fh.read())
