import io

import numpy as np
import pytest

from spdnn.errors import ShapeError, WeightsFormatError
from spdnn.exec import (decode_weights, encode_weights, forward, init_params, loss_and_gradients,
                        param_shapes, read_weights, write_weights)
from spdnn.topology import LayerSpec, NetworkTopology, Node, infer_shapes

from gradcheck import numeric_grad, rel_error

TOL = 1e-4


def _generic(net, seed=3, size=(8, 8)):
    rng = np.random.default_rng(seed)
    params = init_params(net, seed, (1, *size))
    for k, v in params.items():
        # Move scale/shift off their neutral values so every path is generic.
        params[k] = v + 0.1 * rng.standard_normal(v.shape)
    x = rng.random((2, 1, *size))
    y = rng.random((2, 1, *size))
    return params, x, y


def test_param_names_and_shapes(merged_8x8):
    shapes = param_shapes(merged_8x8)
    assert shapes["3C_1.weight"] == (8, 1, 3, 3)
    assert shapes["32F_4.weight"] == (32, 32 * 1 * 1)
    assert shapes["head.weight"] == (1, 2, 1, 1)
    assert "head.gamma" not in shapes
    assert sum(int(np.prod(s)) for s in shapes.values()) == 8423


def test_init_is_seeded_and_bounded(merged_8x8):
    a = init_params(merged_8x8, 0)
    b = init_params(merged_8x8, 0)
    c = init_params(merged_8x8, 1)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["3C_1.weight"], c["3C_1.weight"])
    w = a["32F_4.weight"]
    bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
    assert np.abs(w).max() <= bound
    assert np.all(a["3C_1.bias"] == 0) and np.all(a["3C_1.gamma"] == 1)


def test_merged_forward_shape_and_range(merged_80x264):
    net, _ = merged_80x264
    params = init_params(net, 0)
    x = np.random.default_rng(0).random((1, 80, 264))
    y = forward(net, params, x)
    assert y.shape == (1, 80, 264) == infer_shapes(net)[net.output_id]
    assert np.all((y > 0) & (y < 1))


def test_identity_conv_net():
    net = NetworkTopology.sequential("id", (1, 5, 5), [
        ("c", LayerSpec.conv(1, 1, activation="none", batch_norm=False)), ("o", LayerSpec.output())])
    params = {"c.weight": np.ones((1, 1, 1, 1)), "c.bias": np.zeros(1)}
    x = np.random.default_rng(1).random((1, 5, 5))
    assert np.array_equal(forward(net, params, x), x)


def test_forward_is_deterministic(merged_8x8):
    params, x, _ = _generic(merged_8x8)
    a = forward(merged_8x8, params, x, mode="train", seed=(4, 2))
    b = forward(merged_8x8, params, x, mode="train", seed=(4, 2))
    assert np.array_equal(a, b)
    assert np.array_equal(forward(merged_8x8, params, x), forward(merged_8x8, params, x))


def test_dropout_only_in_train_mode(merged_8x8):
    params, x, _ = _generic(merged_8x8)
    inference = forward(merged_8x8, params, x)
    assert not np.array_equal(inference, forward(merged_8x8, params, x, mode="train"))


def test_missing_and_misshapen_params(merged_8x8):
    params = init_params(merged_8x8, 0)
    x = np.zeros((1, 8, 8))
    broken = dict(params)
    del broken["1C_6.bias"]
    with pytest.raises(ShapeError, match="1C_6.bias"):
        forward(merged_8x8, broken, x)
    broken = dict(params, **{"3C_1.weight": np.zeros((8, 1, 5, 5))})
    with pytest.raises(ShapeError, match="3C_1.weight"):
        forward(merged_8x8, broken, x)
    with pytest.raises(ShapeError):
        forward(merged_8x8, params, np.zeros((1, 8, 12)))


def test_sampled_gradients_on_merged_net(merged_8x8):
    params, x, y = _generic(merged_8x8)
    _, grads = loss_and_gradients(merged_8x8, params, x, y)
    rng = np.random.default_rng(0)
    for name in params:
        size = params[name].size
        index = sorted(rng.choice(size, size=min(size, 4), replace=False).tolist())

        def f():
            out = forward(merged_8x8, params, x)
            return float(np.mean((out - y) ** 2))

        num = numeric_grad(f, params[name], index=index).ravel()[index]
        ana = grads[name].ravel()[index]
        assert rel_error(ana, num) <= TOL, name


def test_train_mode_gradients_match_fixed_mask(merged_8x8):
    params, x, y = _generic(merged_8x8)
    _, grads = loss_and_gradients(merged_8x8, params, x, y, mode="train", seed=(7, 0))
    name = "32F_4.weight"

    def f():
        out = forward(merged_8x8, params, x, mode="train", seed=(7, 0))
        return float(np.mean((out - y) ** 2))

    index = list(range(0, params[name].size, 97))
    num = numeric_grad(f, params[name], index=index).ravel()[index]
    assert rel_error(grads[name].ravel()[index], num) <= TOL


def test_zero_residual_gives_zero_gradients(merged_8x8):
    params, x, _ = _generic(merged_8x8)
    target = forward(merged_8x8, params, x)
    loss, grads = loss_and_gradients(merged_8x8, params, x, target)
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.values())


def test_unused_branch_gets_exactly_zero():
    net = NetworkTopology("dead", (1, 6, 6), (
        Node("a", LayerSpec.conv(3, 2), ("input",)),
        Node("dead", LayerSpec.conv(3, 2), ("input",)),
        Node("o", LayerSpec.output(), ("a",)),
    ))
    rng = np.random.default_rng(0)
    params = init_params(net, 0)
    _, grads = loss_and_gradients(net, params, rng.random((1, 6, 6)), rng.random((2, 6, 6)))
    assert all(np.all(grads[k] == 0) for k in grads if k.startswith("dead."))
    assert np.any(grads["a.weight"])


def test_every_merged_parameter_receives_gradient(merged_8x8):
    params, x, y = _generic(merged_8x8)
    _, grads = loss_and_gradients(merged_8x8, params, x, y, mode="train", seed=(0, 0))
    silent = [k for k, g in grads.items() if not np.any(np.abs(g) > 0)]
    assert silent == []


def test_three_dim_input_round_trips(merged_8x8):
    params, x, y = _generic(merged_8x8)
    assert forward(merged_8x8, params, x[0]).shape == (1, 8, 8)
    l3, g3 = loss_and_gradients(merged_8x8, params, x[0], y[0])
    l4, g4 = loss_and_gradients(merged_8x8, params, x[:1], y[:1])
    assert l3 == l4
    assert all(np.array_equal(g3[k], g4[k]) for k in g3)


# --------------------------------------------------------------------------
# weights file

def test_weights_roundtrip(merged_8x8):
    params = init_params(merged_8x8, 5)
    data = encode_weights(params)
    back = decode_weights(data)
    assert list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)
    buf = io.BytesIO()
    write_weights(buf, params)
    buf.seek(0)
    assert encode_weights(read_weights(buf)) == data


def test_weights_layout_is_exact():
    data = encode_weights({"w": np.array([[1.0, -2.0]])})
    expected = (b"SPDW" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                + (1).to_bytes(4, "little") + b"w" + (2).to_bytes(4, "little")
                + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1.0, -2.0], dtype="<f8").tobytes())
    assert data == expected


@pytest.mark.parametrize("mutate, match", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + (2).to_bytes(4, "little") + d[8:], "version"),
    (lambda d: d[:-3], "truncated"),
    (lambda d: d + b"\0", "trailing"),
])
def test_weights_errors(mutate, match):
    data = encode_weights({"w": np.ones((2, 2))})
    with pytest.raises(WeightsFormatError, match=match):
        decode_weights(mutate(data))
