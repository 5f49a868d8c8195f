"""Image quality metrics on [0, 1] arrays."""

from __future__ import annotations

import numpy as np

from ..tensor import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _corr_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-d image with a 1-d window."""
    rows = np.lib.stride_tricks.sliding_window_view(img, w.size, axis=1) @ w
    return np.ascontiguousarray(
        np.lib.stride_tricks.sliding_window_view(rows, w.size, axis=0).transpose(0, 2, 1)) @ w


def _ssim_channel(a: np.ndarray, b: np.ndarray, w: np.ndarray,
                  c1: float, c2: float) -> float:
    mu_a = _corr_valid(a, w)
    mu_b = _corr_valid(b, w)
    var_a = _corr_valid(a * a, w) - mu_a * mu_a
    var_b = _corr_valid(b * b, w) - mu_b * mu_b
    cov = _corr_valid(a * b, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window
    (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.

    Accepts (H, W) or (C, H, W); channels are averaged. Only windows fully
    inside the frame count; frames smaller than 11 pixels shrink the window
    to the frame.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim needs matching shapes, got {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects (C, H, W) or (H, W), got {a.shape}")
    size = min(SSIM_WINDOW, a.shape[1], a.shape[2])
    w = _gaussian_window(size, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    return float(np.mean([_ssim_channel(a[c], b[c], w, c1, c2) for c in range(a.shape[0])]))


def ssim_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-image ssim over matching (N, C, H, W) batches."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim_batch needs matching shapes, got {a.shape} vs {b.shape}")
    return np.array([ssim(a[i], b[i]) for i in range(a.shape[0])])


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference per element (resolution independent)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"l1 needs matching shapes, got {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))
