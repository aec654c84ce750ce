"""Tensor operations with hand-written gradients.

Every op takes and returns float64 arrays laid out ``N x C x H x W`` (a
3-D ``C x H x W`` array is accepted as a batch of one and returned in the
same rank).  Each ``*_backward`` returns gradients for the op's inputs in
the order the forward takes them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

DTYPE = np.float64
_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected a C x H x W or N x C x H x W tensor, got shape {x.shape}")
    return x, False


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


def _zero_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if not pad:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _pad_amount(kernel: int, padding: str) -> int:
    if padding == "same":
        if kernel % 2 == 0:
            raise ShapeError(f"same padding needs an odd kernel, got {kernel}")
        return kernel // 2
    if padding == "valid":
        return 0
    raise ShapeError(f"unknown padding {padding!r}")


# --------------------------------------------------------------------------
# Convolution: P = I * W + b, cross-correlation form.

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str = "same") -> np.ndarray:
    x, squeeze = _batched(x)
    f, c, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {k}x{k2}")
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c}")
    if b.shape != (f,):
        raise ShapeError(f"bias shape {b.shape} does not match {f} output channels")
    pad = _pad_amount(k, padding)
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} is smaller than kernel {k}")
    xp = _zero_pad(x, pad)
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, H', W', k, k
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', F
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return _unbatch(np.ascontiguousarray(out), squeeze)


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, padding: str = "same"):
    x, squeeze = _batched(x)
    dout, _ = _batched(dout)
    f, c, k, _ = w.shape
    pad = _pad_amount(k, padding)
    xp = _zero_pad(x, pad)
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 2, 3]))  # F, C, k, k
    db = dout.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    ho, wo = dout.shape[2], dout.shape[3]
    for i in range(k):
        for j in range(k):
            # N,F,H',W' x F,C -> N,H',W',C
            contrib = np.tensordot(dout, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + ho, j:j + wo] += contrib.transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else dxp
    return _unbatch(np.ascontiguousarray(dx), squeeze), dw, db


# --------------------------------------------------------------------------
# Pooling

def maxpool(x: np.ndarray, factor: int) -> np.ndarray:
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"maxpool factor {factor} does not divide {h}x{w}")
    win = _windows(x, factor)
    return _unbatch(win.max(axis=-1), squeeze)


def _windows(x: np.ndarray, f: int) -> np.ndarray:
    n, c, h, w = x.shape
    return (x.reshape(n, c, h // f, f, w // f, f)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(n, c, h // f, w // f, f * f))


def maxpool_backward(dout: np.ndarray, x: np.ndarray, factor: int) -> np.ndarray:
    """Route each window's gradient to its first (row-major) maximum."""
    x, squeeze = _batched(x)
    dout, _ = _batched(dout)
    n, c, h, w = x.shape
    f = factor
    arg = _windows(x, f).argmax(axis=-1)
    dwin = np.zeros((n, c, h // f, w // f, f * f), dtype=DTYPE)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = (dwin.reshape(n, c, h // f, w // f, f, f)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
    return _unbatch(dx, squeeze)


def unpool(x: np.ndarray, factor: int) -> np.ndarray:
    """Value-repeating upsampling: every entry fills a ``factor x factor`` block."""
    x, squeeze = _batched(x)
    y = np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)
    return _unbatch(y, squeeze)


def unpool_backward(dout: np.ndarray, factor: int) -> np.ndarray:
    dout, squeeze = _batched(dout)
    n, c, h, w = dout.shape
    f = factor
    dx = dout.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5))
    return _unbatch(dx, squeeze)


# --------------------------------------------------------------------------
# Dense

def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map of the flattened input; returns ``N x units x 1 x 1``."""
    x, squeeze = _batched(x)
    flat = x.reshape(x.shape[0], -1)
    units, fan_in = w.shape
    if flat.shape[1] != fan_in:
        raise ShapeError(f"dense expects {fan_in} inputs, got {flat.shape[1]}")
    if b.shape != (units,):
        raise ShapeError(f"bias shape {b.shape} does not match {units} units")
    y = flat @ w.T + b
    return _unbatch(y.reshape(x.shape[0], units, 1, 1), squeeze)


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    x, squeeze = _batched(x)
    dout, _ = _batched(dout)
    flat = x.reshape(x.shape[0], -1)
    g = dout.reshape(dout.shape[0], -1)
    dw = g.T @ flat
    db = g.sum(axis=0)
    dx = (g @ w).reshape(x.shape)
    return _unbatch(dx, squeeze), dw, db


# --------------------------------------------------------------------------
# Per-channel affine standing in for batch normalization

def batchnorm_affine(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    x, squeeze = _batched(x)
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"scale/shift must have {x.shape[1]} entries")
    y = x * gamma[None, :, None, None] + beta[None, :, None, None]
    return _unbatch(y, squeeze)


def batchnorm_affine_backward(dout: np.ndarray, x: np.ndarray, gamma: np.ndarray):
    x, squeeze = _batched(x)
    dout, _ = _batched(dout)
    dx = dout * gamma[None, :, None, None]
    dgamma = (dout * x).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    return _unbatch(dx, squeeze), dgamma, dbeta


# --------------------------------------------------------------------------
# Activations

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # Keep the result strictly inside (0, 1) even where float64 rounds to an endpoint.
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def sigmoid_backward(dout: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient given the sigmoid *output* ``y``."""
    return dout * y * (1.0 - y)


# --------------------------------------------------------------------------
# Dropout

def dropout_mask(shape, rate: float, seed) -> np.ndarray:
    """Inverted-dropout mask with entries in ``{0, 1/(1-rate)}``.

    ``seed`` is anything :class:`numpy.random.SeedSequence` accepts, so
    callers can pass ``(seed, step, layer)`` tuples.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
    keep = rng.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)


# --------------------------------------------------------------------------
# Channel concat / loss

def concat(xs: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(xs, axis=-3)


def concat_backward(dout: np.ndarray, channels: list[int]) -> list[np.ndarray]:
    splits = np.cumsum(channels)[:-1]
    return np.split(dout, splits, axis=-3)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size
