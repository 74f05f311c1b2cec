"""PSNR and single-scale SSIM for images in [0, 1]."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionMismatch, ImageTooSmall

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(reference, candidate):
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)


def psnr(reference, candidate) -> float:
    """10 log10(1 / MSE); ``math.inf`` for identical images."""
    a, b = _pair(reference, candidate)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img, win):
    """Separable Gaussian filter, keeping only fully-covered windows."""
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    h = len(win) // 2
    return out[h:-h, h:-h]


def ssim_map(reference, candidate, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(reference, candidate)
    if min(a.shape[:2]) < SSIM_WIN:
        raise ImageTooSmall(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    win = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, win), _filter_valid(y, win)
        sxx = _filter_valid(x * x, win) - mx * mx
        syy = _filter_valid(y * y, win) - my * my
        sxy = _filter_valid(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.stack(maps, axis=-1)


def ssim(reference, candidate) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows and channels."""
    return float(np.mean(ssim_map(reference, candidate)))


def frame_metrics(reference_frames, candidate_frames) -> list[tuple[int, float, float]]:
    """Per-frame ``(index, psnr, ssim)`` for stacks shaped (N, H, W[, C])."""
    ref = np.asarray(reference_frames)
    cand = np.asarray(candidate_frames)
    if ref.shape != cand.shape:
        raise DimensionMismatch(f"frame stacks differ: {ref.shape} vs {cand.shape}")
    return [(i, psnr(r, c), ssim(r, c)) for i, (r, c) in enumerate(zip(ref, cand))]


def mean_psnr(reference_frames, candidate_frames) -> float:
    return float(np.mean([psnr(r, c) for r, c in zip(reference_frames, candidate_frames)]))
