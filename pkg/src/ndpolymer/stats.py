"""Small statistical helpers shared by the Monte Carlo engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class MCEstimate:
    """Mean, standard error, replica count and master seed of an MC quantity."""

    mean: float
    stderr: float
    replicas: int
    seed: int
    flags: tuple = field(default_factory=tuple)

    @property
    def zero_hit(self) -> bool:
        return "zero-hit" in self.flags

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr


def batch_means(x, n_batches: int = 50) -> tuple[float, float]:
    """Mean and batch-means standard error of a 1-D sample."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    b = max(2, min(n_batches, n))
    size = n // b
    if size == 0:
        return float(x.mean()), math.nan
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(b))


def estimate_from_sample(x, seed: int, n_batches: int = 50) -> MCEstimate:
    m, se = batch_means(x, n_batches)
    flags = ("zero-hit",) if np.all(np.asarray(x) == 0) else ()
    return MCEstimate(m, se, len(x), seed, flags)


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def ks_distance(a, b) -> float:
    return float(_st.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def ks_one_sample(x, cdf) -> float:
    return float(_st.kstest(np.asarray(x), cdf).statistic)


def loglog_slope(x, y) -> float:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def weighted_median(values, log_weights, interpolate: bool = False) -> float:
    """Median of ``values`` under weights ``exp(log_weights)`` (self-normalised).

    ``interpolate`` treats integer data as spread uniformly over
    ``[m - 1/2, m + 1/2]`` (mid-distribution median), which removes the
    rounding of the median to the lattice.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.exp(np.asarray(log_weights) - np.max(log_weights))
    order = np.argsort(v, kind="stable")
    c = np.cumsum(w[order])
    m = float(v[order][np.searchsorted(c, 0.5 * c[-1])])
    if not interpolate:
        return m
    tot = c[-1]
    below = w[v < m].sum() / tot
    at = w[v == m].sum() / tot
    return m - 0.5 + (0.5 - below) / at


def effective_sample_size(log_weights) -> float:
    w = np.exp(np.asarray(log_weights) - np.max(log_weights))
    return float(w.sum() ** 2 / (w * w).sum())
