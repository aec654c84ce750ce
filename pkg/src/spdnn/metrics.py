"""Similarity scores between a predicted depth map and a reference.

All images are single-channel arrays with values in ``[0, 1]``, so the
PSNR peak is 1.  SNR treats the reference as the signal and is therefore
not symmetric in its arguments; neither is PSNR's sentinel handling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
UQI_WINDOW = 8

# Report row order; True means larger is better.
METRIC_ORDER = ("psnr", "mse", "rmse", "snr", "mae", "ssim", "uqi", "pcc")
HIGHER_IS_BETTER = {
    "psnr": True, "mse": False, "rmse": False, "snr": True,
    "mae": False, "ssim": True, "uqi": True, "pcc": True,
}


@dataclass(frozen=True)
class MetricsReport:
    psnr: float
    mse: float
    rmse: float
    snr: float
    mae: float
    ssim: float
    uqi: float | None
    pcc: float | None

    def to_dict(self) -> dict:
        return {k: _json_value(v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _json_value(v):
    if v is None:
        return "undefined"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _as_image(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a single-channel image, got shape {a.shape}")
    if a.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _fit_window(size: int, shape: tuple[int, int]) -> int:
    # Shrink to the largest odd window that still fits the image.
    k = min(size, shape[0], shape[1])
    return k if k % 2 else k - 1


def ssim(pred: np.ndarray, ref: np.ndarray) -> float:
    """Mean SSIM over every valid Gaussian window position (L = 1)."""
    k = _fit_window(SSIM_WINDOW, pred.shape)
    w = gaussian_window(k)
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(img):
        return np.tensordot(sliding_window_view(img, (k, k)), w, axes=([2, 3], [0, 1]))

    mu_x, mu_y = filt(pred), filt(ref)
    mu_xy = mu_x * mu_y
    var_x = filt(pred * pred) - mu_x * mu_x
    var_y = filt(ref * ref) - mu_y * mu_y
    cov = filt(pred * ref) - mu_xy
    num = (2.0 * mu_xy + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def uqi(pred: np.ndarray, ref: np.ndarray) -> float | None:
    """Mean universal quality index over sliding 8x8 windows.

    Windows where both images are flat score ``2*mx*my / (mx^2 + my^2)``,
    or 1 when both are also zero.  ``None`` when either whole image is
    constant.
    """
    if np.ptp(pred) == 0 or np.ptp(ref) == 0:
        return None
    k = min(UQI_WINDOW, pred.shape[0], pred.shape[1])
    wx = sliding_window_view(pred, (k, k))
    wy = sliding_window_view(ref, (k, k))
    mx = wx.mean(axis=(2, 3))
    my = wy.mean(axis=(2, 3))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    vx = (dx * dx).mean(axis=(2, 3))
    vy = (dy * dy).mean(axis=(2, 3))
    cov = (dx * dy).mean(axis=(2, 3))
    spread = vx + vy
    level = mx * mx + my * my
    q = np.ones_like(mx)
    flat = (spread == 0) & (level != 0)
    q[flat] = 2.0 * mx[flat] * my[flat] / level[flat]
    full = (spread != 0) & (level != 0)
    q[full] = 4.0 * cov[full] * mx[full] * my[full] / (spread[full] * level[full])
    # spread != 0 with zero means: numerator vanishes with the means.
    q[(spread != 0) & (level == 0)] = 0.0
    return float(q.mean())


def pcc(pred: np.ndarray, ref: np.ndarray) -> float | None:
    """Pearson correlation over all pixels; ``None`` if either image is constant."""
    if np.ptp(pred) == 0 or np.ptp(ref) == 0:
        return None
    a = pred - pred.mean()
    b = ref - ref.mean()
    r = float(np.sum(a * b) / math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b))))
    return max(-1.0, min(1.0, r))


def compute_metrics(pred, ref) -> MetricsReport:
    pred = _as_image(pred, "prediction")
    ref = _as_image(ref, "reference")
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction {pred.shape} and reference {ref.shape} differ in size")
    diff = ref - pred
    mse = float(np.mean(diff * diff))
    mae = float(np.mean(np.abs(diff)))
    psnr = math.inf if mse == 0 else -10.0 * math.log10(mse)
    err = float(np.sum(diff * diff))
    sig = float(np.sum(ref * ref))
    if err == 0:
        snr = math.inf
    elif sig == 0:
        snr = -math.inf
    else:
        snr = 10.0 * math.log10(sig / err)
    return MetricsReport(
        psnr=psnr, mse=mse, rmse=math.sqrt(mse), snr=snr, mae=mae,
        ssim=ssim(pred, ref), uqi=uqi(pred, ref), pcc=pcc(pred, ref),
    )


def _cell(v) -> str:
    if v is None:
        return "undefined"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.4f}"


def format_report(reports: Mapping[str, MetricsReport] | Sequence[tuple[str, MetricsReport]]) -> str:
    """Fixed-width table, one row per metric, one column per experiment.

    With two or more columns the best entry of each row carries a ``*``.
    """
    items = list(reports.items()) if isinstance(reports, Mapping) else list(reports)
    if not items:
        raise ValueError("format_report needs at least one report")
    names = [name for name, _ in items]
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["metric".ljust(8) + "".join(n.rjust(width) for n in names)]
    for key in METRIC_ORDER:
        values = [getattr(r, key) for _, r in items]
        best = None
        known = [v for v in values if v is not None]
        if len(items) > 1 and known:
            best = max(known) if HIGHER_IS_BETTER[key] else min(known)
        cells = []
        for v in values:
            mark = "*" if best is not None and v == best else " "
            cells.append((_cell(v) + mark).rjust(width))
        lines.append(key.upper().ljust(8) + "".join(cells))
    return "\n".join(lines) + "\n"
