"""PSNR and MS-SSIM for images with unit dynamic range."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def psnr(x: np.ndarray, xhat: np.ndarray) -> float:
    x, xhat = _pair(x, xhat)
    mse = np.mean((x - xhat) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10 * np.log10(1.0 / mse)))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, keeping only positions where the window fits entirely
    r = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    h, w = img.shape[:2]
    return out[r:h - r, r:w - r]


def _ssim_terms(x, y, g):
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    lum = (2 * mx * my + C1) / (mx * mx + my * my + C1)
    cs = (2 * sxy + C2) / (sxx + syy + C2)
    # per-channel means
    return (lum * cs).mean(axis=(0, 1)), cs.mean(axis=(0, 1))


def msssim_levels(h: int, w: int, max_levels: int = len(MSSSIM_WEIGHTS)) -> int:
    levels = max_levels
    while levels > 1 and min(h, w) < WINDOW * 2 ** (levels - 1):
        levels -= 1
    return levels


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Multi-scale SSIM of two HxW or HxWxC images in [0, 1].

    Uses an 11x11 Gaussian window (sigma 1.5) and the five standard exponents.
    Images too small for five levels use fewer, with the leading exponents
    renormalised to sum to one. Channels are scored separately and averaged.
    """
    x, y = _pair(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    h, w = x.shape[:2]
    if min(h, w) < WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")
    levels = msssim_levels(h, w)
    weights = np.asarray(MSSSIM_WEIGHTS[:levels])
    if levels < len(MSSSIM_WEIGHTS):
        # the standard five sum to 1.0001; only truncated sets are renormalised
        weights = weights / weights.sum()
    g = gaussian_window()
    factors = []
    for level in range(levels):
        ssim, cs = _ssim_terms(x, y, g)
        if level == levels - 1:
            factors.append(np.maximum(ssim, 0))
        else:
            factors.append(np.maximum(cs, 0))
            hh, ww = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
            x = x[:hh, :ww].reshape(hh // 2, 2, ww // 2, 2, -1).mean(axis=(1, 3))
            y = y[:hh, :ww].reshape(hh // 2, 2, ww // 2, 2, -1).mean(axis=(1, 3))
    per_channel = np.prod(np.stack(factors) ** weights[:, None], axis=0)
    return float(np.clip(per_channel.mean(), 0.0, 1.0))
