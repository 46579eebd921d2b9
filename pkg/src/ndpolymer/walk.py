"""Simple random walk kernels on Z^d.

Paths, ranges, visit and hitting probabilities, the lattice Green
function, the profile ``f`` and the overlap sum ``J_N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import special

from . import rng
from ._hashset import find_or_insert, new_table, pack, packing
from .errors import NumericalDiagnostic, ValidationError
from .stats import MCEstimate, batch_means, estimate_from_sample


@dataclass(frozen=True)
class WalkPath:
    steps: np.ndarray  # (N + 1, d) integer sites, steps[0] = 0

    @property
    def N(self) -> int:
        return self.steps.shape[0] - 1

    @property
    def d(self) -> int:
        return self.steps.shape[1]


@dataclass(frozen=True)
class RangeSummary:
    range: frozenset
    size: int
    max_disp: int


def walk_key(seed: int, replica: int) -> np.uint64:
    """Counter-RNG key of replica ``replica`` under master seed ``seed``."""
    return np.uint64(rng.stream_key(np.uint64(rng.label_seed(seed, "walk")), np.uint64(replica)))


@njit(cache=True)
def _positions(key, N, d):
    out = np.zeros((N + 1, d), np.int64)
    for j in range(N):
        a, s = rng.step_direction(key, j, d)
        out[j + 1] = out[j]
        out[j + 1, a] += s
    return out


def simulate_walk(N: int, d: int, seed: int, replica: int = 0) -> WalkPath:
    if N < 0:
        raise ValidationError("N must be >= 0", condition="N >= 0")
    return WalkPath(_positions(walk_key(seed, replica), int(N), int(d)))


def range_summary(path: WalkPath) -> RangeSummary:
    sites = frozenset(map(tuple, path.steps.tolist()))
    return RangeSummary(sites, len(sites), int(np.abs(path.steps).max(initial=0)))


# ---------------------------------------------------------------- visits


def _as_points(delta, d: int | None = None) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(delta, dtype=np.int64))
    if d is not None and pts.shape[1] != d:
        raise ValidationError("point dimension mismatch", condition="points in Z^d")
    if np.any(np.all(pts == 0, axis=1)):
        raise ValidationError("points must be nonzero", condition="x_i != 0")
    if len({tuple(p) for p in pts.tolist()}) != len(pts):
        raise ValidationError("points must be distinct", condition="distinct points")
    return pts


@njit(cache=True)
def _ordered_hit_times(seed_key, targets, n_max, replicas):
    k, d = targets.shape
    out = np.full(replicas, -1, np.int64)
    pos = np.zeros(d, np.int64)
    for r in range(replicas):
        key = rng.stream_key(seed_key, np.uint64(r))
        pos[:] = 0
        i = 0
        for n in range(1, n_max + 1):
            a, s = rng.step_direction(key, n - 1, d)
            pos[a] += s
            hit = True
            for c in range(d):
                if pos[c] != targets[i, c]:
                    hit = False
                    break
            if hit:
                i += 1
                if i == k:
                    out[r] = n
                    break
    return out


def ordered_hit_times(delta, N: int, replicas: int, seed: int) -> np.ndarray:
    """Time at which replica ``r`` completes the ordered visit of ``delta`` (-1 if not by N)."""
    pts = _as_points(delta)
    key = np.uint64(rng.label_seed(seed, "walk"))
    return _ordered_hit_times(key, pts, int(N), int(replicas))


def visit_probability_mc(delta, N, replicas: int, seed: int):
    """MC estimate of the probability that the walk visits ``delta`` in order by time N.

    ``N`` may be a sequence; the same replicas serve every entry, so the
    estimates are non-decreasing in N.
    """
    grid = np.atleast_1d(np.asarray(N, dtype=np.int64))
    times = ordered_hit_times(delta, int(grid.max()), replicas, seed)
    out = []
    for n in grid:
        hits = ((times >= 0) & (times <= n)).astype(np.float64)
        p = hits.mean()
        se = math.sqrt(p * (1 - p) / replicas)
        flags = ("zero-hit",) if p == 0 else ()
        out.append(MCEstimate(float(p), se, int(replicas), seed, flags))
    return out[0] if np.ndim(N) == 0 else out


def nearest_site_with_parity(z, parity: int) -> np.ndarray:
    """Nearest integer point to ``z`` whose coordinate sum has the given parity."""
    z = np.asarray(z, dtype=np.float64)
    y = np.rint(z).astype(np.int64)
    if (int(y.sum()) - parity) % 2:
        resid = z - y
        i = int(np.argmax(np.abs(resid)))
        y[i] += 1 if resid[i] >= 0 else -1
    return y


# ---------------------------------------------------- exact endpoint laws


def log_p1(m, y):
    """log P(1-D simple walk of m steps ends at y), -inf when impossible."""
    m = np.asarray(m, dtype=np.float64)
    y = abs(float(y))
    ok = (m >= y) & (np.mod(m - y, 2) == 0)
    k = (m + y) / 2
    with np.errstate(invalid="ignore"):
        v = special.gammaln(m + 1) - special.gammaln(k + 1) - special.gammaln(m - k + 1) - m * math.log(2)
    return np.where(ok, v, -np.inf)


@njit(cache=True)
def _logconv(a, b, n):
    out = np.full(n + 1, -np.inf)
    for t in range(n + 1):
        mx = -np.inf
        for m in range(t + 1):
            v = a[m] + b[t - m]
            if v > mx:
                mx = v
        if mx == -np.inf:
            continue
        s = 0.0
        for m in range(t + 1):
            v = a[m] + b[t - m]
            if v > -np.inf:
                s += math.exp(v - mx)
        out[t] = mx + math.log(s)
    return out


def log_prob_endpoint(n: int, y) -> float:
    """log P(S_n = y), exact, via the per-axis step-count decomposition."""
    y = np.asarray(y, dtype=np.int64)
    d = len(y)
    n = int(n)
    if np.abs(y).sum() > n or (np.abs(y).sum() - n) % 2:
        return -math.inf
    if d == 2:
        # rotated coordinates a+b and a-b move as two independent 1-D walks
        return float(log_p1(n, y[0] + y[1]) + log_p1(n, y[0] - y[1]))
    m = np.arange(n + 1, dtype=np.float64)
    lg = special.gammaln(m + 1)
    acc = log_p1(m, y[0]) - lg
    for i in range(1, d - 1):
        acc = _logconv(acc, log_p1(m, y[i]) - lg, n)
    last = log_p1(m, y[d - 1]) - lg
    terms = acc + last[::-1]
    return float(special.logsumexp(terms) + lg[n] - n * math.log(d))


def ld_rate_check(x, xi: float, N_grid, d: int | None = None) -> list[tuple[int, float]]:
    """Empirical rate ``-log P(S_N = [x N^xi]) / N^(2 xi - 1)`` along ``N_grid``.

    Exact single-point computation; the nearest site of the parity of N
    stands in for ``x N^xi``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not (0.5 < xi <= 1.0):
        raise ValidationError("xi must lie in (1/2, 1]", condition="1/2 < xi <= 1")
    if xi == 1.0 and np.abs(x).sum() >= 1.0:
        raise ValidationError("need ||x||_1 < 1 when xi = 1", condition="||x||_1 < 1")
    rows = []
    for N in N_grid:
        N = int(N)
        y = nearest_site_with_parity(x * N ** xi, N % 2)
        lp = log_prob_endpoint(N, y)
        if not math.isfinite(lp):
            raise NumericalDiagnostic(f"P(S_N = y) underflows at N={N}")
        rows.append((N, -lp / N ** (2 * xi - 1)))
    return rows


# ----------------------------------------------------- Green function


def _green_tail(absx: np.ndarray, d: int, T: float) -> np.ndarray:
    """Integral over (T, inf) from the large-argument expansion of ive."""
    mu4 = 4.0 * absx.astype(np.float64) ** 2
    a = (mu4 - 1) * d / 8.0
    b = (mu4 - 1) * (mu4 - 9) * d * d / 128.0
    A = a.sum(axis=1)
    B = b.sum(axis=1) + 0.5 * (A * A - (a * a).sum(axis=1))
    c = (d / (2 * math.pi)) ** (d / 2)
    h = d / 2.0
    return c * (T ** (1 - h) / (h - 1) - A * T ** (-h) / h + B * T ** (-h - 1) / (h + 1))


@lru_cache(maxsize=8)
def _log_nodes(lo: float, hi: float, panels: int, order: int = 10):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return u, wt


def green_function(x, d: int) -> np.ndarray | float:
    """Lattice Green function ``G(x) = sum_n P(S_n = x)`` for d >= 3.

    Uses ``G(x) = int_0^inf prod_i exp(-t/d) I_{x_i}(t/d) dt`` (time spent at x
    by the continuous-time walk) with Gauss-Legendre panels in ``log t`` and
    an asymptotic tail beyond ``T``.
    """
    if d < 3:
        raise ValidationError("the walk is recurrent for d < 3", condition="d >= 3")
    arr = np.atleast_2d(np.abs(np.asarray(x, dtype=np.int64)))
    if arr.shape[1] != d:
        raise ValidationError("point dimension mismatch", condition="x in Z^d")
    out = np.empty(len(arr))
    # group by the largest coordinate so that T scales with the point
    big = arr.max(axis=1)
    for m in np.unique(big):
        sel = big == m
        T = max(1e5, 400.0 * d * float(m) ** 2)
        u, wt = _log_nodes(math.log(1e-12), math.log(T), 240)
        t = np.exp(u)
        pts = arr[sel]
        vals = np.ones((len(pts), len(t)))
        for i in range(d):
            vals *= special.ive(pts[:, i][:, None], t[None, :] / d)
        out[sel] = vals @ (wt * t) + _green_tail(pts, d, T) + 1e-12 * (pts.sum(axis=1) == 0)
    return out if np.ndim(x) > 1 else float(out[0])


@lru_cache(maxsize=None)
def escape_probability(d: int) -> float:
    """``P(S_n != 0 for all n >= 1) = 1/G(0)``."""
    if d < 3:
        raise ValidationError("d=2 walk is recurrent: escape probability is 0", condition="d >= 3")
    return 1.0 / green_function(np.zeros(d, np.int64), d)


def hitting_probability_inf(x, d: int):
    """``P(x in R_infinity) = G(x)/G(0)``; 1 at the origin."""
    g0 = green_function(np.zeros(d, np.int64), d)
    return green_function(x, d) / g0


# ------------------------------------------------------------ profile f


def f_profile(x, d: int | None = None) -> float:
    """Limit profile of ``v_N P(x sqrt(N) in R_N)``.

    d = 2: ``E_1(|x|^2/2)``. d >= 3: ``2 lambda_d int_0^1 (2 pi u/d)^(-d/2)
    exp(-d|x|^2/(2u)) du``, evaluated in closed form through the upper
    incomplete gamma function.
    """
    x = np.asarray(x, dtype=np.float64)
    d = len(x) if d is None else d
    r2 = float(x @ x)
    if r2 == 0.0:
        raise ValidationError("f is singular at the origin", condition="x != 0")
    if d == 2:
        return float(special.exp1(r2 / 2.0))
    a = d * r2 / 2.0
    s = d / 2.0 - 1.0
    inc = special.gammaincc(s, a) * special.gamma(s)
    return float(2.0 * escape_probability(d) * (2 * math.pi / d) ** (-d / 2) * a ** (-s) * inc)


def f_small_x_leading(r: float, d: int) -> float:
    """Leading small-|x| behaviour of f: ``2 log(1/r)`` (d=2) or ``C r^(2-d)``."""
    if d == 2:
        return 2.0 * math.log(1.0 / r)
    s = d / 2.0 - 1.0
    c = 2.0 * escape_probability(d) * (2 * math.pi / d) ** (-d / 2) * (d / 2.0) ** (-s) * math.gamma(s)
    return c * r ** (2 - d)


def normaliser_v(N: int, d: int) -> float:
    return math.log(N) if d == 2 else N ** (d / 2.0 - 1.0)


def local_limit_check(x, d: int, N_grid, replicas: int, seed: int) -> list[dict]:
    """MC estimates of ``v_N P(y_N in R_N)`` against ``f(x)``, ``y_N ~ x sqrt(N)``."""
    x = np.asarray(x, dtype=np.float64)
    fx = f_profile(x, d)
    rows = []
    for N in N_grid:
        N = int(N)
        y = nearest_site_with_parity(x * math.sqrt(N), N % 2)
        est = visit_probability_mc(y[None, :], N, replicas, seed)
        v = normaliser_v(N, d)
        rows.append(dict(N=N, site=tuple(int(c) for c in y), estimate=est.mean,
                         stderr=est.stderr, scaled=v * est.mean, f=fx,
                         ratio=v * est.mean / fx, zero_hit=est.zero_hit))
    return rows


# --------------------------------------------------------- overlap sum


def hit_probabilities_exact(N: int, d: int) -> tuple[np.ndarray, int]:
    """``P(x in R_N)`` on the box ``[-N, N]^d`` by first-passage renewal."""
    side = 2 * N + 1
    cells = side ** d
    if cells * (N + 1) ** 2 > 4e9:
        raise ValidationError("exact overlap sum too large; use mode='mc'", condition="box * N^2 <= 4e9")
    p = np.zeros((N + 1,) + (side,) * d)
    centre = (N,) * d
    p[(0,) + centre] = 1.0
    for n in range(1, N + 1):
        cur = np.zeros((side,) * d)
        prev = p[n - 1]
        for ax in range(d):
            cur += np.roll(prev, 1, axis=ax) + np.roll(prev, -1, axis=ax)
        p[n] = cur / (2 * d)
    p0 = p[(slice(None),) + centre]
    first = np.zeros_like(p)
    for n in range(1, N + 1):
        acc = p[n].copy()
        for m in range(1, n):
            acc -= first[m] * p0[n - m]
        first[n] = acc
    hit = first[1:].sum(axis=0)
    hit[centre] = 1.0
    return hit, N


@njit(cache=True)
def _intersection_counts(seed_key, grid, replicas, d, bits, off, size):
    n_max = grid[-1]
    out = np.zeros((replicas, len(grid)))
    keys = np.full(size, -1, np.int64)
    stamps = np.zeros(size, np.int64)
    flags = np.zeros(size, np.int64)
    p1 = np.zeros(d, np.int64)
    p2 = np.zeros(d, np.int64)
    for r in range(replicas):
        k1 = rng.stream_key(seed_key, np.uint64(2 * r))
        k2 = rng.stream_key(seed_key, np.uint64(2 * r + 1))
        stamp = r + 1
        p1[:] = 0
        p2[:] = 0
        s, _ = find_or_insert(keys, stamps, stamp, pack(p1, bits, off))
        flags[s] = 3
        count = 1
        g = 0
        for n in range(1, n_max + 1):
            a, sg = rng.step_direction(k1, n - 1, d)
            p1[a] += sg
            s, new = find_or_insert(keys, stamps, stamp, pack(p1, bits, off))
            if new:
                flags[s] = 1
            elif flags[s] == 2:
                flags[s] = 3
                count += 1
            a, sg = rng.step_direction(k2, n - 1, d)
            p2[a] += sg
            s, new = find_or_insert(keys, stamps, stamp, pack(p2, bits, off))
            if new:
                flags[s] = 2
            elif flags[s] == 1:
                flags[s] = 3
                count += 1
            while g < len(grid) and grid[g] == n:
                out[r, g] = count
                g += 1
    return out


def intersection_sizes(N_grid, d: int, replicas: int, seed: int) -> np.ndarray:
    """``|R_N cap R'_N|`` for independent pairs, one row per pair, one column per N."""
    grid = np.sort(np.asarray(N_grid, dtype=np.int64))
    bits, off = packing(d)
    if grid[-1] >= off:
        raise ValidationError("N too large for the packed site keys", condition="N < 2^(62/d - 1)")
    size = len(new_table(2 * int(grid[-1]) + 2)[0])
    key = np.uint64(rng.label_seed(seed, "overlap"))
    return _intersection_counts(key, grid, int(replicas), int(d), bits, off, size)


def overlap_sum(N: int, d: int, mode: str = "mc", replicas: int = 10_000, seed: int = 0):
    """``J_N = sum_x P(x in R_N)^2``.

    ``mode='exact'`` returns a float (renewal recursion, small N);
    ``mode='mc'`` returns an :class:`MCEstimate` of ``E|R_N cap R'_N|``.
    """
    if mode == "exact":
        hit, _ = hit_probabilities_exact(int(N), d)
        return float((hit ** 2).sum())
    if mode != "mc":
        raise ValidationError(f"unknown mode {mode!r}", condition="mode in {exact, mc}")
    sizes = intersection_sizes([N], d, replicas, seed)[:, 0]
    return estimate_from_sample(sizes, seed)


# --------------------------------------------------- escape by simulation


@njit(cache=True)
def _fill_keys(key, start, count, pos, bits, off, out, d):
    """Advance ``pos`` by ``count`` steps; return the largest |coordinate| seen."""
    far = 0
    for j in range(count):
        a, s = rng.step_direction(key, start + j, d)
        pos[a] += s
        if abs(pos[a]) > far:
            far = abs(pos[a])
        out[j] = pack(pos, bits, off)
    return far


@njit(cache=True)
def _window_no_return(buf, n_total, block, N, keys, stamps, vals, stamp):
    """Count k < block with no revisit of site buf[k] in (k, k + N]."""
    hits = 0
    for t in range(n_total - 1, -1, -1):
        s, new = find_or_insert(keys, stamps, stamp, buf[t])
        nxt = np.int64(1) << 62 if new else vals[s]
        vals[s] = t
        if t < block and nxt - t > N:
            hits += 1
    return hits


def no_return_estimate(N: int, d: int, blocks: int, block: int, seed: int) -> MCEstimate:
    """Estimate ``P(T_0 > N)`` (no return to the start by time N) from one long walk.

    Every time k of the walk contributes the indicator that ``S_k`` is not
    revisited during ``(k, k+N]``; by the Markov property each indicator has
    the target mean. The standard error comes from block means.
    """
    bits, off = packing(d)
    key = np.uint64(rng.stream_key(np.uint64(rng.label_seed(seed, "escape")), np.uint64(0)))
    span = block + N
    buf = np.empty(span + 1, np.int64)
    keys, stamps, vals = new_table(span + 1)
    pos = np.zeros(d, np.int64)
    buf[0] = pack(pos, bits, off)
    far = _fill_keys(key, 0, span, pos, bits, off, buf[1:], d)
    step = span
    fractions = np.empty(blocks)
    for b in range(blocks):
        if far >= off:
            raise NumericalDiagnostic("walk left the packed coordinate range")
        hits = _window_no_return(buf, span + 1, block, N, keys, stamps, vals, b + 1)
        fractions[b] = hits / block
        buf[: N + 1] = buf[block: block + N + 1]
        far = max(far, _fill_keys(key, step, block, pos, bits, off, buf[N + 1:], d))
        step += block
    mean, se = batch_means(fractions, n_batches=blocks)
    return MCEstimate(mean, se, blocks * block, seed)
