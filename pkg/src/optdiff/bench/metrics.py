"""Image quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

__all__ = ["MetricResult", "psnr", "ssim", "evaluate_metrics"]

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricResult:
    psnr_db: float
    ssim: float


def _as_pair(x, x_star) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(x_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _resolve_peak(peak, x_star: np.ndarray) -> float:
    if peak is None:
        peak = float(np.max(x_star))
    peak = float(peak)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    return peak


def psnr(x, x_star, peak: float | None = None) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``.

    ``peak`` defaults to ``max(x_star)``.
    """
    a, b = _as_pair(x, x_star)
    peak = _resolve_peak(peak, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def _gaussian_window() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    offs = np.arange(-half, half + 1, dtype=np.float64)
    taps = np.exp(-(offs**2) / (2.0 * _SSIM_SIGMA**2))
    win = np.outer(taps, taps)
    return win / win.sum()


def ssim(x, x_star, peak: float | None = None) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use valid-mode convolution, so both images must be
    at least 11 pixels along every axis.
    """
    a, b = _as_pair(x, x_star)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2-D images, got shape {a.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {_SSIM_WINDOW} pixels per side, got {a.shape}"
        )
    peak = _resolve_peak(peak, b)
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    win = _gaussian_window()

    def local_mean(img):
        return scipy.signal.convolve2d(img, win, mode="valid")

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a**2
    var_b = local_mean(b * b) - mu_b**2
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate_metrics(x, x_star, peak: float | None = None) -> MetricResult:
    return MetricResult(psnr_db=psnr(x, x_star, peak), ssim=ssim(x, x_star, peak))
