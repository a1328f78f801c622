"""Aggregate score statistics."""

from __future__ import annotations

import numpy as np


def compute_iqm(scores) -> float:
    """Interquartile mean with fractional trimming.

    Sorted score ``i`` of ``n`` covers the quantile interval ``[i/n, (i+1)/n]``;
    its weight is the overlap of that interval with ``[0.25, 0.75]``. When
    ``n`` is a multiple of 4 this is the plain mean of the middle half.
    """
    x = np.sort(np.asarray(scores, dtype=np.float64))
    n = x.size
    if n < 4:
        raise ValueError(f"IQM needs at least 4 scores, got {n}")
    lo = np.arange(n) / n
    hi = np.arange(1, n + 1) / n
    w = np.clip(np.minimum(hi, 0.75) - np.maximum(lo, 0.25), 0.0, None)
    return float(np.dot(w, x) / w.sum())


def min_max_normalize(reward: float, lo: float, hi: float) -> float:
    if not hi > lo:
        raise ValueError(f"need hi > lo, got lo={lo}, hi={hi}")
    return (reward - lo) / (hi - lo)


def bootstrap_ci(scores, stat=compute_iqm, resamples: int = 2000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval of ``stat`` over resampled ``scores``."""
    x = np.asarray(scores, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    stats = np.array([stat(x[row]) for row in idx])
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(stats, alpha)), float(np.quantile(stats, 1.0 - alpha))
