"""Quality and rate metrics: PSNR, MS-SSIM, L1, and Bjontegaard delta rate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import tensor as tt
from .tensor import Tensor

PSNR_CAP = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


class DisjointCurvesError(ValueError):
    pass


class MetricConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RDPoint:
    rate: float  # bits per pixel
    quality: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b) -> float:
    """PSNR in dB for signals in [0, 1], capped at 100 dB."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise tt.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def frame_psnrs(a, b) -> list[float]:
    """Per-frame PSNR of ``[T,3,H,W]`` videos."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise tt.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return [psnr(x, y) for x, y in zip(a, b)]


def video_psnr(a, b) -> float:
    """Mean of per-frame PSNR, the figure reported for a whole sequence."""
    return float(np.mean(frame_psnrs(a, b)))


def l1_loss(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise tt.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return tt.tabs(a - b).mean()


def gaussian_taps(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def msssim_weights(scales: int) -> np.ndarray:
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise MetricConfigError(f"scales must be in [1, {len(MSSSIM_WEIGHTS)}], got {scales}")
    w = np.asarray(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    return w / w.sum()


def min_size(scales: int) -> int:
    return WINDOW * 2 ** (scales - 1)


def ms_ssim(a, b, scales: int = 3) -> Tensor:
    """Differentiable MS-SSIM of ``[3,H,W]`` or ``[B,3,H,W]`` frames, batch-averaged.

    Computed on the channel-mean image with an 11x11 Gaussian window (valid
    region), 2x2 average pooling between scales, contrast-structure terms at
    every scale and the luminance term only at the coarsest one.
    """
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape:
        raise tt.DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.reshape((1,) + a.shape)
        b = b.reshape((1,) + b.shape)
    weights = msssim_weights(scales)
    need = min_size(scales)
    if min(a.shape[-2:]) < need:
        raise MetricConfigError(
            f"frames {a.shape[-2]}x{a.shape[-1]} too small for {scales} scales; need >= {need}"
        )
    taps = gaussian_taps()
    x = a.mean(axis=1)
    y = b.mean(axis=1)
    total = None
    for j in range(scales):
        mu_x = tt.filter_valid(x, taps)
        mu_y = tt.filter_valid(y, taps)
        mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
        s_xx = tt.filter_valid(x * x, taps) - mu_xx
        s_yy = tt.filter_valid(y * y, taps) - mu_yy
        s_xy = tt.filter_valid(x * y, taps) - mu_xy
        cs_map = (s_xy * 2.0 + C2) / (s_xx + s_yy + C2)
        if j == scales - 1:
            lum = (mu_xy * 2.0 + C1) / (mu_xx + mu_yy + C1)
            term = (lum * cs_map).mean(axis=(1, 2))
        else:
            term = cs_map.mean(axis=(1, 2))
            x, y = tt.avg_pool2(x), tt.avg_pool2(y)
        factor = tt.clamped_pow(term, float(weights[j]))
        total = factor if total is None else total * factor
    return total.mean()


def ms_ssim_value(a, b, scales: int = 3) -> float:
    """MS-SSIM as a float, evaluated in float64."""
    with tt.no_grad():
        return ms_ssim(
            Tensor(_as_array(a).astype(np.float64)), Tensor(_as_array(b).astype(np.float64)), scales
        ).item()


def _curve(points) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, RDPoint) else RDPoint(*p) for p in points]
    if len(pts) < 4:
        raise ValueError(f"BD-rate needs at least 4 points per curve, got {len(pts)}")
    q = np.array([p.quality for p in pts], dtype=np.float64)
    r = np.log(np.array([p.rate for p in pts], dtype=np.float64))
    order = np.argsort(q, kind="stable")
    q, r = q[order], r[order]
    if np.any(np.diff(q) <= 0):
        raise ValueError("BD-rate needs distinct quality values per curve")
    return q, r


def bd_rate(anchor: Sequence, test: Sequence, samples: int = 1000) -> float:
    """Average bitrate difference (percent) of ``test`` vs ``anchor`` at equal quality.

    Log-rate is interpolated as a piecewise-cubic (PCHIP) function of quality and
    integrated by the trapezoid rule over the overlapping quality interval.
    """
    qa, ra = _curve(anchor)
    qt, rt = _curve(test)
    lo, hi = max(qa[0], qt[0]), min(qa[-1], qt[-1])
    if not hi > lo:
        raise DisjointCurvesError(f"quality ranges do not overlap: [{qa[0]}, {qa[-1]}] vs [{qt[0]}, {qt[-1]}]")
    grid = np.linspace(lo, hi, samples)
    va = PchipInterpolator(qa, ra)(grid)
    vt = PchipInterpolator(qt, rt)(grid)
    avg = np.trapezoid(vt - va, grid) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)
