"""Raster quality metrics: PSNR and single-scale SSIM.

Both operate on same-size rasters with values normalized to [0, 1],
grayscale (H, W) or multi-channel (H, W, C). Channels are averaged for
SSIM and pooled into one MSE for PSNR.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from .validation import check_same_shape, check_unit_range, require
from .exceptions import InputError

# Identical images would give infinite PSNR; manifests need a finite number.
PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_DYNAMIC_RANGE = 1.0


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require(a.ndim in (2, 3), f"rasters must be (H, W) or (H, W, C), got {a.shape}")
    check_same_shape(a, b, "a", "b")
    require(a.size > 0, "rasters must not be empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError("rasters must be finite")
    check_unit_range(a, "a")
    check_unit_range(b, "b")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over [0, 1] rasters.

    ``10 * log10(1 / MSE)`` with MAX = 1, capped at 99.0 dB for identical
    inputs (and any MSE small enough to exceed the cap).
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian weighting window."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> float:
    c1 = (SSIM_K1 * _DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * _DYNAMIC_RANGE) ** 2
    # Weighted local moments at valid window positions only.
    mu_x = signal.correlate2d(x, window, mode="valid")
    mu_y = signal.correlate2d(y, window, mode="valid")
    xx = signal.correlate2d(x * x, window, mode="valid")
    yy = signal.correlate2d(y * y, window, mode="valid")
    xy = signal.correlate2d(x * y, window, mode="valid")
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    score = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


def ssim(a, b) -> float:
    """Single-scale structural similarity over [0, 1] rasters.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range
    1; the map is averaged over valid window positions, and channels are
    averaged. Both raster dimensions must be at least the window size.
    """
    a, b = _check_pair(a, b)
    require(
        a.shape[0] >= SSIM_WINDOW and a.shape[1] >= SSIM_WINDOW,
        f"rasters must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM",
    )
    window = gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, window)
    scores = [_ssim_channel(a[..., c], b[..., c], window) for c in range(a.shape[2])]
    return float(np.mean(scores))
