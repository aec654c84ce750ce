"""Seeded desk-scale training task.

Inputs are smooth random intensity fields; the target is the blurred
inversion of the input, rescaled to span [0, 1].  The task is small enough
to train in seconds and only exercises the pipeline end to end.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import NumericError
from ..topology import NetworkTopology
from .network import forward, init_params, loss_and_gradients
from .ops import mse_loss
from .optim import OptimizerConfig, lookahead, nesterov_step


def _rescale(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)


def synthetic_task(height: int = 40, width: int = 40, count: int = 8, seed: int = 0,
                   channels: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(inputs, targets)``, each ``count x channels x height x width``."""
    rng = np.random.default_rng([seed, 0x5D])
    inputs = np.empty((count, channels, height, width))
    targets = np.empty((count, 1, height, width))
    for i in range(count):
        for c in range(channels):
            noise = rng.standard_normal((height, width))
            inputs[i, c] = _rescale(gaussian_filter(noise, sigma=4.0, mode="wrap"))
        targets[i, 0] = _rescale(gaussian_filter(1.0 - inputs[i].mean(axis=0), sigma=2.0, mode="nearest"))
    return inputs, targets


def train_demo(net: NetworkTopology, steps: int = 200, seed: int = 0, learning_rate: float = 0.01,
               momentum: float = 0.9, count: int = 8, input_shape=None,
               return_params: bool = False):
    """Full-batch Nesterov training on :func:`synthetic_task`.

    Returns ``steps + 1`` losses: entry ``k`` is the inference-mode MSE after
    ``k`` updates.  With ``return_params`` the trained parameters follow.
    """
    c, h, w = input_shape or net.input
    x, y = synthetic_task(h, w, count, seed, channels=c)
    params = init_params(net, seed, (c, h, w))
    cfg = OptimizerConfig(learning_rate, momentum)
    history = []
    # Overflow shows up as a non-finite loss, which is reported below.
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps + 1):
            loss = mse_loss(forward(net, params, x), y)
            if not np.isfinite(loss):
                raise NumericError("loss is not finite", step)
            history.append(loss)
            if step == steps:
                break
            _, grads = loss_and_gradients(net, lookahead(params, cfg), x, y, mode="train", seed=(seed, step))
            params = nesterov_step(params, grads, cfg)
    return (history, params) if return_params else history
