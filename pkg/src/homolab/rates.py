"""Log-log rate fits and the deterministic seed stream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

__all__ = ["RateFit", "fit_rate", "seed_stream"]

_M64 = (1 << 64) - 1


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    n: int

    def __str__(self) -> str:
        return f"slope {self.slope:+.4f} ± {self.stderr:.4f} (R²={self.r_squared:.4f}, n={self.n})"


def fit_rate(x, y) -> RateFit:
    """Ordinary least squares of log y on log x; both inputs must be positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if len(x) < 3:
        raise ValueError(f"rate fit needs at least 3 points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate fit needs strictly positive data")
    res = linregress(np.log(x), np.log(y))
    return RateFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        stderr=float(res.stderr),
        r_squared=float(res.rvalue**2),
        n=len(x),
    )


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def seed_stream(base_seed: int, task_index: int) -> int:
    """Collision-free 64-bit seed for task ``task_index`` of a run.

    Deterministic mixing so that results are independent of scheduling order
    and worker count: seed i is a pure function of (base_seed, i).
    """
    if task_index < 0:
        raise ValueError("task index must be non-negative")
    return _splitmix64(((base_seed & _M64) * 0x9E3779B97F4A7C15 + task_index + 1) & _M64)
