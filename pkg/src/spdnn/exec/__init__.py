"""Desk-scale differentiable executor."""

from .network import ParamStore, backward, forward, init_params, loss_and_gradients, param_shapes
from .optim import OptimizerConfig, lookahead, nesterov_step
from .train import synthetic_task, train_demo
from .weights import decode_weights, encode_weights, read_weights, write_weights

__all__ = [
    "ParamStore", "backward", "forward", "init_params", "loss_and_gradients", "param_shapes",
    "OptimizerConfig", "lookahead", "nesterov_step", "synthetic_task", "train_demo",
    "decode_weights", "encode_weights", "read_weights", "write_weights",
]
