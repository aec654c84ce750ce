"""Forward and reverse-mode evaluation of a :class:`NetworkTopology`."""

from __future__ import annotations

import zlib
from typing import Literal

import numpy as np

from ..errors import ShapeError
from ..topology import INPUT_ID, Activation, LayerKind, NetworkTopology, infer_shapes
from . import ops

Mode = Literal["train", "inference"]
ParamStore = dict[str, np.ndarray]


def param_shapes(net: NetworkTopology, input_shape=None) -> dict[str, tuple[int, ...]]:
    """Name and shape of every parameter tensor, in node order."""
    shapes = infer_shapes(net, input_shape)
    src = dict(shapes)
    src[INPUT_ID] = tuple(input_shape or net.input)
    out: dict[str, tuple[int, ...]] = {}
    for n in net.nodes:
        spec = n.spec
        c, h, w = src[n.inputs[0]]
        if spec.kind is LayerKind.CONV:
            out[f"{n.id}.weight"] = (spec.channels, c, spec.kernel, spec.kernel)
            out[f"{n.id}.bias"] = (spec.channels,)
            if spec.batch_norm:
                out[f"{n.id}.gamma"] = (spec.channels,)
                out[f"{n.id}.beta"] = (spec.channels,)
        elif spec.kind is LayerKind.DENSE:
            out[f"{n.id}.weight"] = (spec.units, c * h * w)
            out[f"{n.id}.bias"] = (spec.units,)
    return out


def init_params(net: NetworkTopology, seed: int = 0, input_shape=None) -> ParamStore:
    """Glorot-uniform weights, zero biases, unit scale and zero shift.

    Each tensor draws from its own stream keyed by ``(seed, crc32(name))``
    so adding a layer never perturbs the others.
    """
    params: ParamStore = {}
    for name, shape in param_shapes(net, input_shape).items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            if len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
            else:
                fan_out, fan_in = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "gamma":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _activate(x, act: Activation):
    if act is Activation.RELU:
        return ops.relu(x)
    if act is Activation.SIGMOID:
        return ops.sigmoid(x)
    return x


def _activate_backward(dout, pre, post, act: Activation):
    if act is Activation.RELU:
        return ops.relu_backward(dout, pre)
    if act is Activation.SIGMOID:
        return ops.sigmoid_backward(dout, post)
    return dout


def _check_params(net: NetworkTopology, params: ParamStore, input_shape) -> None:
    for name, shape in param_shapes(net, input_shape).items():
        if name not in params:
            raise ShapeError(f"missing parameter {name!r}")
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")


def _evaluate(net: NetworkTopology, params: ParamStore, x: np.ndarray, mode: Mode, seed):
    x = np.asarray(x, dtype=ops.DTYPE)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"input must be C x H x W or N x C x H x W, got shape {x.shape}")
    if x.shape[1] != net.input[0]:
        raise ShapeError(f"input has {x.shape[1]} channels, network expects {net.input[0]}")
    _check_params(net, params, x.shape[1:])

    vals = {INPUT_ID: x}
    cache: dict[str, dict] = {}
    for index, n in enumerate(net.nodes):
        spec = n.spec
        src = vals[n.inputs[0]]
        kind = spec.kind
        if kind is LayerKind.CONV:
            z = ops.conv2d(src, params[f"{n.id}.weight"], params[f"{n.id}.bias"], spec.padding.value)
            c = {"z": z}
            if spec.batch_norm:
                z = ops.batchnorm_affine(z, params[f"{n.id}.gamma"], params[f"{n.id}.beta"])
            c["pre"] = z
            y = _activate(z, spec.activation)
            c["post"] = y
            cache[n.id] = c
        elif kind is LayerKind.DENSE:
            z = ops.dense(src, params[f"{n.id}.weight"], params[f"{n.id}.bias"])
            y = _activate(z, spec.activation)
            c = {"pre": z, "post": y}
            if mode == "train" and spec.dropout > 0:
                c["mask"] = ops.dropout_mask(y.shape, spec.dropout, (*_seed_tuple(seed), index))
                y = y * c["mask"]
            cache[n.id] = c
        elif kind is LayerKind.MAXPOOL:
            y = ops.maxpool(src, spec.factor)
        elif kind is LayerKind.UNPOOL:
            y = ops.unpool(src, spec.factor)
        elif kind is LayerKind.RESHAPE:
            y = src.reshape((src.shape[0], *spec.target_shape))
        elif kind is LayerKind.CONCAT:
            y = ops.concat([vals[s] for s in n.inputs])
        else:
            y = src
        vals[n.id] = y
    out = vals[net.output_id]
    return (out[0] if squeeze else out), vals, cache, squeeze


def _seed_tuple(seed) -> tuple[int, ...]:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


def forward(net: NetworkTopology, params: ParamStore, x: np.ndarray,
            mode: Mode = "inference", seed=0) -> np.ndarray:
    """Evaluate ``net`` on ``x``; dropout is active only in ``"train"`` mode."""
    return _evaluate(net, params, x, mode, seed)[0]


def loss_and_gradients(net: NetworkTopology, params: ParamStore, x: np.ndarray, target: np.ndarray,
                       mode: Mode = "inference", seed=0) -> tuple[float, ParamStore]:
    """MSE of ``forward(x)`` against ``target`` and its gradient for every parameter."""
    out, vals, cache, squeeze = _evaluate(net, params, x, mode, seed)
    loss = ops.mse_loss(out, target)
    target = np.asarray(target, dtype=ops.DTYPE)
    grads: ParamStore = {k: np.zeros_like(v) for k, v in params.items()}
    dout = ops.mse_backward(out, target)
    dvals: dict[str, np.ndarray] = {net.output_id: dout[None] if squeeze else dout}

    def push(node_id, g):
        if node_id in dvals:
            dvals[node_id] = dvals[node_id] + g
        else:
            dvals[node_id] = g

    for n in reversed(net.nodes):
        g = dvals.pop(n.id, None)
        if g is None:
            continue
        spec = n.spec
        kind = spec.kind
        src_id = n.inputs[0]
        if kind is LayerKind.CONV:
            c = cache[n.id]
            g = _activate_backward(g, c["pre"], c["post"], spec.activation)
            if spec.batch_norm:
                g, dgamma, dbeta = ops.batchnorm_affine_backward(g, c["z"], params[f"{n.id}.gamma"])
                grads[f"{n.id}.gamma"] += dgamma
                grads[f"{n.id}.beta"] += dbeta
            dx, dw, db = ops.conv2d_backward(g, vals[src_id], params[f"{n.id}.weight"], spec.padding.value)
            grads[f"{n.id}.weight"] += dw
            grads[f"{n.id}.bias"] += db
            push(src_id, dx)
        elif kind is LayerKind.DENSE:
            c = cache[n.id]
            if "mask" in c:
                g = g * c["mask"]
            g = _activate_backward(g, c["pre"], c["post"], spec.activation)
            dx, dw, db = ops.dense_backward(g, vals[src_id], params[f"{n.id}.weight"])
            grads[f"{n.id}.weight"] += dw
            grads[f"{n.id}.bias"] += db
            push(src_id, dx)
        elif kind is LayerKind.MAXPOOL:
            push(src_id, ops.maxpool_backward(g, vals[src_id], spec.factor))
        elif kind is LayerKind.UNPOOL:
            push(src_id, ops.unpool_backward(g, spec.factor))
        elif kind is LayerKind.RESHAPE:
            push(src_id, g.reshape(vals[src_id].shape))
        elif kind is LayerKind.CONCAT:
            parts = ops.concat_backward(g, [vals[s].shape[1] for s in n.inputs])
            for s, part in zip(n.inputs, parts):
                push(s, part)
        else:
            push(src_id, g)
    return loss, grads


def backward(net: NetworkTopology, params: ParamStore, x: np.ndarray, target: np.ndarray,
             mode: Mode = "inference", seed=0) -> ParamStore:
    return loss_and_gradients(net, params, x, target, mode, seed)[1]
