"""Image quality metrics for unit-range planes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dims differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10 log10(1 / MSE) for peak value 1; identical inputs give PSNR_CAP."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Single-scale SSIM of two 2-D planes.

    8x8 uniform windows at every position, sample (n-1) variances, dynamic
    range 1, mean over windows.
    """
    a, b = _pair(a, b)
    a, b = np.squeeze(a), np.squeeze(b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects a single plane, got dims {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"plane smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    n = SSIM_WINDOW * SSIM_WINDOW
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    ma = wa.mean(axis=(-2, -1))
    mb = wb.mean(axis=(-2, -1))
    da = wa - ma[..., None, None]
    db = wb - mb[..., None, None]
    va = (da * da).sum(axis=(-2, -1)) / (n - 1)
    vb = (db * db).sum(axis=(-2, -1)) / (n - 1)
    cov = (da * db).sum(axis=(-2, -1)) / (n - 1)
    num = (2 * ma * mb + c1) * (2 * cov + c2)
    den = (ma * ma + mb * mb + c1) * (va + vb + c2)
    return float(np.mean(num / den))
