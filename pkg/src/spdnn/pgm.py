"""Binary PGM (P5) reading and writing, maxval 255 or 65535."""

from __future__ import annotations

import numpy as np

from .errors import ImageFormatError

_WHITESPACE = b" \t\r\n\v\f"


def _header_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    """Next whitespace-delimited header token, skipping ``#`` comments.

    Returns the token, its offset and the offset just past it.
    """
    while pos < len(data):
        if data[pos] == ord("#"):
            end = data.find(b"\n", pos)
            if end < 0:
                raise ImageFormatError("unterminated comment in header", pos)
            pos = end + 1
        elif data[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header", start)
    return data[start:pos], start, pos


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)``; pixels are unsigned integers, ``height x width``."""
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (expected magic P5)", 0)
    pos = 2
    fields, starts = [], []
    for what in ("width", "height", "maxval"):
        token, at, pos = _header_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise ImageFormatError(f"bad {what} {token!r}", at) from None
        fields.append(value)
        starts.append(at)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid size {width}x{height}", starts[0])
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported maxval {maxval} (255 or 65535 expected)", starts[2])
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageFormatError("missing whitespace after maxval", pos)
    pos += 1
    dtype = np.dtype("u1") if maxval == 255 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    if len(data) - pos < need:
        raise ImageFormatError(
            f"truncated pixel data: {len(data) - pos} of {need} bytes present", len(data))
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    if int(pixels.max()) > maxval:
        raise ImageFormatError("pixel value exceeds maxval", pos)
    return pixels.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def encode_pgm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError(f"PGM pixels must be 2-D, got shape {pixels.shape}")
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    if pixels.min() < 0 or pixels.max() > maxval:
        raise ValueError(f"pixel values must lie in [0, {maxval}]")
    height, width = pixels.shape
    dtype = "u1" if maxval == 255 else ">u2"
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    return header + pixels.astype(dtype).tobytes()


def read_pgm(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def to_unit(pixels: np.ndarray, maxval: int) -> np.ndarray:
    return pixels.astype(np.float64) / maxval


def from_unit(values: np.ndarray, maxval: int) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * maxval).astype(np.int64)
