"""Central finite-difference gradient oracle.

Independent of the reverse-mode engine: it only evaluates a scalar function
of plain numpy arrays, perturbing one element at a time. Used to verify every
differentiable op and loss against first principles.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_STEP = 1e-5


def numerical_gradients(f: Callable[..., float], arrays: Sequence[np.ndarray],
                        step: float = DEFAULT_STEP) -> list[np.ndarray]:
    """d f / d arrays by central differences, one array of gradients per input."""
    grads = []
    work = [np.array(a, dtype=np.float64) for a in arrays]
    for ai, a in enumerate(work):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(*work)
            flat[i] = orig - step
            fm = f(*work)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = 1e-6) -> float:
    """max |a - n| scaled by the largest gradient magnitude (or the floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), floor)
    return float(np.max(np.abs(analytic - numeric)) / denom)


def max_relative_error(f: Callable[..., float],
                       analytic_grads: Sequence[np.ndarray],
                       arrays: Sequence[np.ndarray],
                       step: float = DEFAULT_STEP) -> float:
    numeric = numerical_gradients(f, arrays, step=step)
    return max(relative_error(a, n) for a, n in zip(analytic_grads, numeric))
