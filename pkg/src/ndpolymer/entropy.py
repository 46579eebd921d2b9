"""Entropy functionals on ordered point sets and the walk's rate functions.

The multi-dimensional rate function is an infimum over the time fractions
spent on each axis. Its first-order conditions give ``u_i = sqrt(x_i^2 + s^2)``
with a single scalar ``s`` fixed by ``sum u_i = 1``, so both the rate
function and the time allocation of the rate entropy reduce to monotone
one-dimensional root finding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _dp
from .errors import ValidationError

LOG2 = math.log(2.0)


def rate_J(t: float) -> float:
    """One-dimensional rate function; ``+inf`` outside [-1, 1]."""
    a = abs(float(t))
    if a > 1.0:
        return math.inf
    if a == 1.0:
        return LOG2
    if a < 1e-4:
        # series avoids cancellation: t^2/2 + t^4/12 + t^6/30
        a2 = a * a
        return a2 / 2 + a2 * a2 / 12 + a2 ** 3 / 30
    return 0.5 * ((1 + a) * math.log1p(a) + (1 - a) * math.log1p(-a))


@njit(cache=True)
def _solve_s(x):
    """Root ``s > 0`` of ``sum_i sqrt(x_i^2 + s^2) = 1`` (needs ||x||_1 < 1)."""
    d = x.shape[0]
    s = 1.0 / d
    for _ in range(200):
        g = -1.0
        dg = 0.0
        for i in range(d):
            r = math.sqrt(x[i] * x[i] + s * s)
            g += r
            dg += s / r
        step = g / dg
        s_new = s - step
        if s_new <= 0.0:
            s_new = 0.5 * s
        if abs(s_new - s) <= 1e-16 * s:
            s = s_new
            break
        s = s_new
    return s


@njit(cache=True)
def _rate_jd(x):
    d = x.shape[0]
    l1 = 0.0
    for i in range(d):
        l1 += abs(x[i])
    if l1 > 1.0:
        return np.inf
    if l1 == 0.0:
        return 0.0
    if l1 == 1.0:
        v = LOG2
        for i in range(d):
            a = abs(x[i])
            if a > 0:
                v += a * math.log(d * a)
        return v
    s = _solve_s(x)
    v = math.log(d * s)
    for i in range(d):
        v += x[i] * math.asinh(x[i] / s)
    return v


def rate_Jd(x) -> float:
    """Rate function of the d-dimensional walk (``+inf`` when ``||x||_1 > 1``)."""
    return float(_rate_jd(np.asarray(x, dtype=np.float64).ravel()))


def rate_Jd_allocation(x) -> np.ndarray:
    """Minimising axis time fractions ``u`` for :func:`rate_Jd`."""
    x = np.asarray(x, dtype=np.float64)
    l1 = np.abs(x).sum()
    if l1 > 1.0:
        raise ValidationError("||x||_1 > 1: rate is infinite", condition="||x||_1 <= 1")
    if l1 == 1.0:
        return np.abs(x)
    s = _solve_s(x)
    return np.sqrt(x * x + s * s)


# -------------------------------------------------------------- Ent


def _increments(delta) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    if pts.size == 0:
        return np.zeros((0, 0))
    anchored = np.vstack([np.zeros(pts.shape[1]), pts])
    return np.diff(anchored, axis=0)


def path_length(delta) -> float:
    inc = _increments(delta)
    return float(np.sqrt((inc * inc).sum(axis=1)).sum()) if inc.size else 0.0


def ent(delta, d: int) -> float:
    """``(d/2) * (length of the path 0 -> x_1 -> ... -> x_k)^2``."""
    L = path_length(delta)
    return 0.5 * d * L * L


@dataclass(frozen=True)
class EntN:
    value: float
    allocation: np.ndarray  # time increments t_i - t_{i-1}, summing to N


def ent_N(delta, d: int, N: float) -> EntN:
    if N < 1:
        raise ValidationError("N must be >= 1", condition="N >= 1")
    inc = _increments(delta)
    lengths = np.sqrt((inc * inc).sum(axis=1)) if inc.size else np.zeros(0)
    L = lengths.sum()
    alloc = lengths / L * N if L > 0 else np.full(len(lengths), N / max(len(lengths), 1))
    return EntN(ent(delta, d) / N, alloc)


def quadratic_cost(delta, d: int, allocation) -> float:
    """``sum (d/2) |x_i - x_{i-1}|^2 / (t_i - t_{i-1})`` for a given allocation."""
    inc = _increments(delta)
    sq = (inc * inc).sum(axis=1)
    return float(0.5 * d * (sq / np.asarray(allocation, dtype=np.float64)).sum())


# ----------------------------------------------------------- hat Ent


@njit(cache=True)
def _kappa(y, S):
    """Root ``kappa > 0`` of ``sum_j sqrt(1 + kappa^2 y_j^2) = S``."""
    l1 = 0.0
    for j in range(y.shape[0]):
        l1 += abs(y[j])
    k = S / l1  # right of the root; Newton on a convex increasing map
    for _ in range(200):
        g = -S
        dg = 0.0
        for j in range(y.shape[0]):
            r = math.sqrt(1.0 + k * k * y[j] * y[j])
            g += r
            dg += k * y[j] * y[j] / r
        if dg == 0.0:
            break
        k_new = k - g / dg
        if k_new <= 0.0:
            k_new = 0.5 * k
        if abs(k_new - k) <= 1e-15 * k:
            k = k_new
            break
        k = k_new
    return k


@njit(cache=True)
def _total_time(inc, S):
    t = 0.0
    for i in range(inc.shape[0]):
        t += S / _kappa(inc[i], S)
    return t


@njit(cache=True)
def _hat_ent_unit(inc):
    """Rate entropy at unit time for nonzero increments (rows of ``inc``)."""
    k, d = inc.shape
    if k == 0:
        return 0.0, np.zeros(0)
    l1 = 0.0
    for i in range(k):
        for j in range(d):
            l1 += abs(inc[i, j])
    if l1 > 1.0:
        return np.inf, np.zeros(k)
    tau = np.empty(k)
    if l1 == 1.0:
        v = 0.0
        for i in range(k):
            li = 0.0
            for j in range(d):
                li += abs(inc[i, j])
            tau[i] = li
            z = inc[i] / li
            v += li * _rate_jd(z)
        return v, tau
    # bracket the scalar S in (d, inf) on a log(S - d) scale
    lo = math.log(1e-300)
    hi = 0.0
    while _total_time(inc, d + math.exp(hi)) > 1.0:
        hi += 2.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if _total_time(inc, d + math.exp(mid)) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    S = d + math.exp(hi)
    v = -math.log(S / d)
    for i in range(k):
        kap = _kappa(inc[i], S)
        tau[i] = S / kap
        for j in range(d):
            v += inc[i, j] * math.asinh(kap * inc[i, j])
    # renormalise tiny bisection slack so the allocation sums to one
    s = tau.sum()
    for i in range(k):
        tau[i] /= s
    return v, tau


@dataclass(frozen=True)
class HatEnt:
    value: float
    allocation: np.ndarray  # time increments, summing to N (empty for inf)


def hat_ent_N(delta, d: int, N: float) -> HatEnt:
    """Infimum over visit times of ``sum (t_i - t_{i-1}) J_d((x_i - x_{i-1})/(t_i - t_{i-1}))``.

    Scaling gives ``hat_ent_N(delta) = N * hat_ent_1(delta / N)``; zero
    increments cost nothing and receive no time.
    """
    if N <= 0:
        raise ValidationError("N must be > 0", condition="N > 0")
    inc = _increments(delta)
    if inc.size == 0:
        return HatEnt(0.0, np.zeros(0))
    if inc.shape[1] != d:
        raise ValidationError("point dimension mismatch", condition="points in R^d")
    nz = np.any(inc != 0, axis=1)
    v, tau = _hat_ent_unit(np.ascontiguousarray(inc[nz] / N))
    alloc = np.zeros(len(inc))
    if math.isinf(v):
        return HatEnt(math.inf, alloc)
    alloc[nz] = tau * N
    return HatEnt(float(N * v), alloc)


def hat_ent(delta, d: int) -> float:
    return hat_ent_N(delta, d, 1.0).value


def rate_cost(delta, d: int, allocation) -> float:
    """``sum tau_i J_d(y_i / tau_i)`` for a given allocation."""
    inc = _increments(delta)
    total = 0.0
    for y, t in zip(inc, np.asarray(allocation, dtype=np.float64)):
        if np.any(y != 0):
            total += t * rate_Jd(y / t)
    return total


# ------------------------------------------------- shortest visit order


@dataclass(frozen=True)
class VisitOrder:
    length: float
    order: tuple
    exact: bool


def shortest_visit_length(points, d: int | None = None, mode: str = "exact") -> VisitOrder:
    """Shortest origin-anchored open path through all ``points``.

    ``mode='exact'`` runs the subset dynamic program (at most 22 points);
    ``mode='greedy'`` is nearest-neighbour and carries no optimality claim.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mode == "greedy":
        order, L = _dp.nearest_neighbour_order(pts)
        return VisitOrder(L, tuple(order), False)
    if mode != "exact":
        raise ValidationError(f"unknown mode {mode!r}", condition="mode in {exact, greedy}")
    _dp.check_size(len(pts))
    dp, best, d0, dist = _dp.subset_lengths(pts)
    full = (1 << len(pts)) - 1
    order = _dp.best_order(dp, d0, dist, full)
    return VisitOrder(float(best[full]), tuple(int(i) for i in order), True)
