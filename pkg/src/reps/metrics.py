"""Reconstruction metrics computable without pretrained networks.

Signals here are 1-d vectors, so SSIM uses a uniform sliding window over
coordinates instead of an image window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["MetricReport", "mse", "psnr", "ssim"]


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    posterior_mean_err: Optional[float] = None
    tv_distance: Optional[float] = None


def mse(x, x_ref) -> float:
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape:
        raise ValueError("shape mismatch")
    return float(np.mean((x - x_ref) ** 2))


def psnr(x, x_ref, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical signals give +inf."""
    if peak <= 0.0:
        raise ValueError("peak must be positive")
    err = mse(x, x_ref)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def ssim(x, x_ref, window: int = 8, k1: float = 0.01, k2: float = 0.03,
         peak: float = 1.0) -> float:
    """Mean local SSIM over uniform sliding windows of the given length."""
    x = np.asarray(x, dtype=float).ravel()
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    if x.shape != x_ref.shape:
        raise ValueError("shape mismatch")
    if window > x.size:
        raise ValueError(f"window {window} larger than signal length {x.size}")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(x, window)
    wb = np.lib.stride_tricks.sliding_window_view(x_ref, window)
    mu_a = wa.mean(axis=1)
    mu_b = wb.mean(axis=1)
    var_a = wa.var(axis=1)
    var_b = wb.var(axis=1)
    cov = (wa * wb).mean(axis=1) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
