"""Nesterov momentum in the lookahead form.

    v <- momentum * v - lr * grad(theta + momentum * v)
    theta <- theta + v
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

ParamStore = dict[str, np.ndarray]


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: ParamStore = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def _velocity(self, name: str, like: np.ndarray) -> np.ndarray:
        v = self.velocity.get(name)
        if v is None:
            v = self.velocity[name] = np.zeros_like(like)
        elif v.shape != like.shape:
            raise ShapeError(f"velocity {name!r} has shape {v.shape}, parameter has {like.shape}")
        return v


def lookahead(params: ParamStore, cfg: OptimizerConfig) -> ParamStore:
    """The point ``theta + momentum * v`` at which the next gradient is taken."""
    return {k: p + cfg.momentum * cfg._velocity(k, p) for k, p in params.items()}


def nesterov_step(params: ParamStore, grads_at_lookahead: ParamStore, cfg: OptimizerConfig) -> ParamStore:
    """Advance the velocity in ``cfg`` and return the updated parameters."""
    out: ParamStore = {}
    for name, p in params.items():
        g = grads_at_lookahead[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter has {p.shape}")
        v = cfg.momentum * cfg._velocity(name, p) - cfg.learning_rate * g
        cfg.velocity[name] = v
        out[name] = p + v
    return out
