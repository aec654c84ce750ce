import json
import math
import statistics

import numpy as np
import pytest

from spdnn.errors import ShapeError
from spdnn.metrics import METRIC_ORDER, MetricsReport, compute_metrics, format_report


# --------------------------------------------------------------------------
# direct-formula oracles (plain loops, no shared helpers)

def _window_stats(a, b, weights, top, left, k):
    mx = my = 0.0
    for u in range(k):
        for v in range(k):
            mx += weights[u][v] * a[top + u][left + v]
            my += weights[u][v] * b[top + u][left + v]
    vx = vy = cov = 0.0
    for u in range(k):
        for v in range(k):
            dx = a[top + u][left + v] - mx
            dy = b[top + u][left + v] - my
            vx += weights[u][v] * dx * dx
            vy += weights[u][v] * dy * dy
            cov += weights[u][v] * dx * dy
    return mx, my, vx, vy, cov


def ssim_oracle(a, b):
    h, w = len(a), len(a[0])
    k = min(11, h, w)
    if k % 2 == 0:
        k -= 1
    centre = (k - 1) / 2
    g = [[math.exp(-((u - centre) ** 2 + (v - centre) ** 2) / (2 * 1.5 ** 2)) for v in range(k)] for u in range(k)]
    total = sum(map(sum, g))
    g = [[x / total for x in row] for row in g]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    scores = []
    for top in range(h - k + 1):
        for left in range(w - k + 1):
            mx, my, vx, vy, cov = _window_stats(a, b, g, top, left, k)
            scores.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(scores) / len(scores)


def uqi_oracle(a, b):
    h, w = len(a), len(a[0])
    k = min(8, h, w)
    flat = [[1.0 / (k * k)] * k for _ in range(k)]
    scores = []
    for top in range(h - k + 1):
        for left in range(w - k + 1):
            mx, my, vx, vy, cov = _window_stats(a, b, flat, top, left, k)
            scores.append(4 * cov * mx * my / ((vx + vy) * (mx * mx + my * my)))
    return sum(scores) / len(scores)


def pcc_oracle(a, b):
    return statistics.correlation([x for row in a for x in row], [y for row in b for y in row])


# --------------------------------------------------------------------------

def test_identity_pair(rng):
    x = rng.random((16, 20))
    r = compute_metrics(x, x)
    assert r.mse == 0 and r.mae == 0 and r.rmse == 0
    assert abs(r.ssim - 1) <= 1e-12 and abs(r.uqi - 1) <= 1e-12 and abs(r.pcc - 1) <= 1e-12
    assert r.psnr == math.inf
    assert r.to_dict()["psnr"] == "inf"


def test_uniform_offset(rng):
    ref = rng.random((12, 12)) * 0.8
    r = compute_metrics(ref + 0.1, ref)
    assert r.mse == pytest.approx(0.01, abs=1e-15)
    assert r.psnr == pytest.approx(20.0, abs=1e-12)
    assert r.mae == pytest.approx(0.1, abs=1e-15)


def test_oracle_agreement_on_random_pairs():
    rng = np.random.default_rng(8)
    for _ in range(100):
        a = rng.random((8, 8))
        b = np.clip(a + 0.3 * rng.standard_normal((8, 8)), 0, 1)
        r = compute_metrics(a, b)
        al, bl = a.tolist(), b.tolist()
        assert abs(r.ssim - ssim_oracle(al, bl)) <= 1e-9
        assert abs(r.uqi - uqi_oracle(al, bl)) <= 1e-9
        assert abs(r.pcc - pcc_oracle(al, bl)) <= 1e-9


def test_oracle_agreement_on_larger_image():
    rng = np.random.default_rng(9)
    a, b = rng.random((14, 17)), rng.random((14, 17))
    r = compute_metrics(a, b)
    assert abs(r.ssim - ssim_oracle(a.tolist(), b.tolist())) <= 1e-9
    assert abs(r.uqi - uqi_oracle(a.tolist(), b.tolist())) <= 1e-9


def test_invariants_and_symmetry():
    rng = np.random.default_rng(10)
    for _ in range(50):
        a, b = rng.random((10, 12)), rng.random((10, 12))
        ab, ba = compute_metrics(a, b), compute_metrics(b, a)
        assert ab.mse >= 0 and ab.rmse == pytest.approx(math.sqrt(ab.mse))
        assert ab.mae <= ab.rmse + 1e-15
        assert -1 <= ab.ssim <= 1 and -1 <= ab.uqi <= 1 and -1 <= ab.pcc <= 1
        for key in ("mse", "mae", "rmse", "ssim", "pcc", "uqi", "psnr"):
            assert getattr(ab, key) == pytest.approx(getattr(ba, key), abs=1e-12)
        assert ab.psnr == pytest.approx(-10 * math.log10(ab.mse), abs=1e-12)


def test_snr_uses_reference_as_signal():
    ref = np.full((8, 8), 0.5)
    pred = np.full((8, 8), 0.4)
    r = compute_metrics(pred, ref)
    assert r.snr == pytest.approx(10 * math.log10(0.25 / 0.01), abs=1e-12)
    assert compute_metrics(ref, pred).snr != pytest.approx(r.snr)


def test_pcc_affine_invariance(rng):
    a = rng.random((9, 9))
    b = rng.random((9, 9))
    base = compute_metrics(a, b).pcc
    assert compute_metrics(a, 0.5 * b + 0.2).pcc == pytest.approx(base, abs=1e-12)
    assert compute_metrics(a, 1.0 - b).pcc == pytest.approx(-base, abs=1e-12)


def test_constant_image_is_undefined(rng):
    r = compute_metrics(np.full((8, 8), 0.3), rng.random((8, 8)))
    assert r.pcc is None and r.uqi is None
    assert json.loads(r.to_json())["pcc"] == "undefined"
    assert math.isfinite(r.ssim)


def test_errors():
    with pytest.raises(ShapeError):
        compute_metrics(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        compute_metrics(np.full((4, 4), 1.5), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        compute_metrics(np.full((4, 4), np.nan), np.zeros((4, 4)))


# --------------------------------------------------------------------------
# report table

def _report(**kw):
    base = dict(psnr=10.0, mse=0.1, rmse=0.3, snr=5.0, mae=0.2, ssim=0.5, uqi=0.4, pcc=0.6)
    base.update(kw)
    return MetricsReport(**base)


def test_single_report_has_eight_rows():
    text = format_report({"exp1": _report()})
    lines = text.splitlines()
    assert len(lines) == 9
    assert [line.split()[0] for line in lines[1:]] == [k.upper() for k in METRIC_ORDER]
    assert "*" not in text
    assert "10.0000" in lines[1]


def test_best_marks_follow_direction():
    a = _report(psnr=14.3424, mse=0.04, ssim=0.7, mae=0.3)
    b = _report(psnr=12.0, mse=0.06, ssim=0.8, mae=0.1)
    lines = format_report([("a", a), ("b", b)]).splitlines()
    rows = {line.split()[0]: line for line in lines[1:]}
    assert rows["PSNR"].split()[1:] == ["14.3424*", "12.0000"]
    assert rows["MSE"].split()[1:] == ["0.0400*", "0.0600"]
    assert rows["SSIM"].split()[1:] == ["0.7000", "0.8000*"]
    assert rows["MAE"].split()[1:] == ["0.3000", "0.1000*"]
    assert rows["RMSE"].count("*") == 2  # ties mark every best column


def test_report_is_deterministic_and_fixed_width():
    reports = {"first": _report(), "a-much-longer-name": _report(uqi=None, psnr=math.inf)}
    text = format_report(reports)
    assert text == format_report(reports)
    widths = {len(line) for line in text.splitlines()}
    assert len(widths) == 1
    assert "undefined" in text and "inf*" in text


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        format_report({})
