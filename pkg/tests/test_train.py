import numpy as np
import pytest

from spdnn.errors import NumericError
from spdnn.exec import synthetic_task, train_demo
from spdnn.topology import LayerSpec, NetworkTopology


def test_synthetic_task_is_seeded_and_normalized():
    x, y = synthetic_task(seed=3)
    x2, y2 = synthetic_task(seed=3)
    assert x.shape == y.shape == (8, 1, 40, 40)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    assert not np.array_equal(x, synthetic_task(seed=4)[0])
    for img in (*x, *y):
        assert img.min() == 0.0 and img.max() == 1.0


def test_target_inverts_input():
    x, y = synthetic_task(seed=0)
    corr = np.corrcoef(x.ravel(), y.ravel())[0, 1]
    assert corr < -0.5


def test_history_is_deterministic(merged_40x40):
    a = train_demo(merged_40x40, steps=3, seed=0)
    b = train_demo(merged_40x40, steps=3, seed=0)
    assert len(a) == 4
    assert a == b
    assert a != train_demo(merged_40x40, steps=3, seed=1)


def test_zero_learning_rate_keeps_loss_constant(merged_40x40):
    history = train_demo(merged_40x40, steps=3, seed=0, learning_rate=0.0)
    assert len(set(history)) == 1


def test_short_run_makes_progress(merged_40x40):
    history = train_demo(merged_40x40, steps=20, seed=0)
    assert history[-1] < history[0]


def test_divergence_reports_step():
    net = NetworkTopology.sequential("lin", (1, 4, 4), [
        ("c", LayerSpec.conv(3, 1, activation="none", batch_norm=False)), ("o", LayerSpec.output())])
    with pytest.raises(NumericError) as info:
        train_demo(net, steps=200, seed=0, learning_rate=1e6, momentum=0.0, input_shape=(1, 4, 4))
    assert info.value.step is not None and info.value.step > 0
    assert "step" in str(info.value)
