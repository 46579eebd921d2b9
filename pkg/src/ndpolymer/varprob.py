"""Energy-entropy variational problems over ordered point sets.

For a fixed subset the best quadratic entropy is attained by the shortest
origin-anchored path, so the exact solver enumerates subsets through the
subset DP and keeps the best ``beta * energy - entropy``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _dp, rng
from .entropy import ent, hat_ent_N
from .env import OrderStatistics, PoissonField, order_statistics, unit_ball_volume
from .errors import ValidationError
from .stats import loglog_slope, wilson_interval

VARPROB_EXACT_CAP = 20
ORDER_HEURISTIC = "order-heuristic exact-allocation"


@dataclass(frozen=True)
class EnergySpec:
    stats: OrderStatistics
    ell: int
    mode: str = "top_ell"  # top_ell | beyond_ell | all

    def __post_init__(self):
        if self.mode not in ("top_ell", "beyond_ell", "all"):
            raise ValidationError(f"unknown mode {self.mode!r}", condition="mode")
        if not 0 <= self.ell <= len(self.stats):
            raise ValidationError("ell must not exceed the number of weights", condition="ell <= |stats|")

    def family(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.stats
        if self.mode == "top_ell":
            return s.weights[: self.ell], s.sites[: self.ell]
        if self.mode == "beyond_ell":
            return s.weights[self.ell:], s.sites[self.ell:]
        return s.weights, s.sites


@dataclass(frozen=True)
class VarProbSolution:
    value: float
    witness: np.ndarray  # ordered points (k, d), possibly empty
    energy: float
    entropy: float
    ell_used: int
    indices: tuple = ()
    method: str = "exact"
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def empty(self) -> bool:
        return len(self.witness) == 0


def _key(p) -> tuple:
    return tuple(float(c) for c in p)


def omega_energy(delta, spec: EnergySpec) -> float:
    """Sum of the selected weights whose site belongs to ``delta``."""
    pts = np.atleast_2d(np.asarray(delta, dtype=np.float64))
    if pts.size == 0:
        return 0.0
    wanted = {_key(p) for p in pts}
    w, sites = spec.family()
    return float(sum(wi for wi, s in zip(w, sites) if _key(s) in wanted))


def _empty(d: int, ell: int, method: str = "exact") -> VarProbSolution:
    return VarProbSolution(0.0, np.zeros((0, d)), 0.0, 0.0, ell, (), method)


def _solve_quadratic(weights, sites, N: float, beta: float, d: int, method: str) -> VarProbSolution:
    """Exact ``max beta * W(S) - (d/2) L(S)^2 / N`` over subsets and orders."""
    w = np.asarray(weights, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(sites, dtype=np.float64))
    n = len(w)
    dim = pts.shape[1] if pts.size else d
    if n == 0 or beta == 0:
        return _empty(dim, n, method)
    dp, best, d0, dist = _dp.subset_lengths(pts)
    W = _dp.subset_sums(w)
    vals = beta * W - 0.5 * d * best * best / N
    vals[0] = 0.0
    mask = int(np.argmax(vals))
    if vals[mask] <= 0.0:
        return _empty(dim, n, method)
    order = _dp.best_order(dp, d0, dist, mask)
    witness = pts[order]
    return VarProbSolution(float(vals[mask]), witness, float(W[mask]), ent(witness, d) / N, n,
                           tuple(int(i) for i in order), method)


def _hat_for_subset(pts, order, d: int, N: float, refine: bool = True):
    """Rate entropy along ``order`` with adjacent-swap refinement of the order."""
    order = list(order)
    cur = hat_ent_N(pts[order], d, N).value
    improved = refine and len(order) > 2
    while improved:
        improved = False
        for i in range(len(order) - 1):
            trial = order[:]
            trial[i], trial[i + 1] = trial[i + 1], trial[i]
            v = hat_ent_N(pts[trial], d, N).value
            if v < cur - 1e-15:
                order, cur, improved = trial, v, True
    return cur, order


def _hat_exact_order(pts, subset, d: int, N: float):
    import itertools

    best, best_order = math.inf, None
    for perm in itertools.permutations(subset):
        v = hat_ent_N(pts[list(perm)], d, N).value
        if v < best:
            best, best_order = v, list(perm)
    return best, best_order


def _solve_rate(weights, sites, N: float, beta: float, d: int, exact_order: bool = False) -> VarProbSolution:
    """``max beta * W(S) - hatEnt_N(S)``.

    The visit order is the Euclidean-shortest one, refined by adjacent swaps,
    and the time allocation is then exact. Subsets are examined in order of
    the upper bound ``beta W - L^2/(2N)`` (valid since the rate entropy is
    at least ``L^2/(2N)``) and the scan stops once no bound can win.
    """
    w = np.asarray(weights, dtype=np.float64)
    pts = np.atleast_2d(np.asarray(sites, dtype=np.float64))
    n = len(w)
    dim = pts.shape[1] if pts.size else d
    method = "exact-order" if exact_order else ORDER_HEURISTIC
    if n == 0 or beta == 0:
        return _empty(dim, n, method)
    dp, best, d0, dist = _dp.subset_lengths(pts)
    W = _dp.subset_sums(w)
    upper = beta * W - 0.5 * best * best / N
    upper[0] = -np.inf
    cand = np.flatnonzero(upper > 0)
    cand = cand[np.argsort(-upper[cand], kind="stable")]
    top_val, top_mask, top_order, top_h = 0.0, 0, [], 0.0
    for mask in cand:
        if upper[mask] <= top_val:
            break
        if exact_order:
            subset = [j for j in range(n) if (mask >> j) & 1]
            h, order = _hat_exact_order(pts, subset, d, N)
        else:
            h, order = _hat_for_subset(pts, _dp.best_order(dp, d0, dist, int(mask)), d, N)
        v = beta * W[mask] - h
        if v > top_val:
            top_val, top_mask, top_order, top_h = v, int(mask), order, h
    if top_mask == 0:
        return _empty(dim, n, method)
    return VarProbSolution(float(top_val), pts[top_order], float(W[top_mask]), float(top_h), n,
                           tuple(int(i) for i in top_order), method)


def _restrict(weights, sites, cap: int):
    """Keep the ``cap`` largest weights (a feasible, hence lower-bounding, restriction)."""
    return weights[:cap], sites[:cap]


def discrete_T(stats: OrderStatistics, N: float, beta: float, ell: int, d: int,
               kind: str = "quadratic", exact_order: bool = False) -> VarProbSolution:
    """Top-``ell`` discrete problem: ``beta * Omega^(ell) - Ent_N`` or ``- hatEnt_N``."""
    if beta < 0:
        raise ValidationError("beta must be >= 0", condition="beta >= 0")
    spec = EnergySpec(stats, ell, "top_ell")
    w, sites = spec.family()
    method = "exact"
    if ell > VARPROB_EXACT_CAP:
        w, sites = _restrict(w, sites, VARPROB_EXACT_CAP)
        method = "heuristic"
    if kind == "quadratic":
        return _solve_quadratic(w, sites, N, beta, d, method)
    if kind == "rate":
        if exact_order and ell > 7:
            raise ValidationError("exact order search is limited to ell <= 7", condition="ell <= 7")
        sol = _solve_rate(w, sites, N, beta, d, exact_order)
        return sol if method == "exact" else VarProbSolution(**{**sol.__dict__, "method": "heuristic"})
    raise ValidationError(f"unknown kind {kind!r}", condition="kind in {quadratic, rate}")


def discrete_T_beyond(stats: OrderStatistics, N: float, beta: float, ell: int, d: int) -> VarProbSolution:
    """Same problem over the weights ranked after the ``ell``-th."""
    spec = EnergySpec(stats, ell, "beyond_ell")
    w, sites = spec.family()
    method = "exact"
    if len(w) > VARPROB_EXACT_CAP:
        w, sites = _restrict(w, sites, VARPROB_EXACT_CAP)
        method = "heuristic"
    return _solve_quadratic(w, sites, N, beta, d, method)


# ----------------------------------------------------------- continuum


def continuum_T_trunc(q: float, beta: float, ell: int, alpha: float, d: int, seed: int,
                      kind: str = "quadratic", field: PoissonField | None = None) -> VarProbSolution:
    """Truncated continuum problem on the top-``ell`` points of the ball of radius ``q``.

    ``kind='quadratic'``: ``sup beta * pi^(ell) - Ent``. ``kind='rate'``:
    ``sup pi^(ell) - hatEnt / beta`` (infinite entropy outside the unit
    l1-ball). Passing ``field`` reuses its randomness (coupled sampling).
    """
    if ell < 1 or ell > VARPROB_EXACT_CAP:
        raise ValidationError("need 1 <= ell <= 20", condition="1 <= ell <= 20")
    fld = field if field is not None else PoissonField(alpha, d, q, seed)
    top = fld.top(ell, q)
    if kind == "quadratic":
        return _solve_quadratic(top.weights, top.sites, 1.0, beta, d, "exact")
    if kind == "rate":
        if beta <= 0:
            raise ValidationError("beta must be > 0", condition="beta > 0")
        sol = _solve_rate(top.weights, top.sites, 1.0, beta, d)
        return VarProbSolution(sol.value / beta, sol.witness, sol.energy, sol.entropy,
                               sol.ell_used, sol.indices, sol.method)
    raise ValidationError(f"unknown kind {kind!r}", condition="kind in {quadratic, rate}")


def scaling_factor(beta: float, alpha: float, d: int) -> float:
    """Space dilation ``a = beta^(alpha/(2 alpha - d))`` mapping coupling 1 to ``beta``."""
    return beta ** (alpha / (2 * alpha - d))


def scaling_samples(beta: float, alpha: float, d: int, ell: int, q: float, samples: int,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Samples of ``T_{beta,q}`` and of ``beta^(2 alpha/(2 alpha - d)) T_{1,q/a}``.

    The dilation ``x -> a x, w -> a^(d/alpha) w`` leaves the Poisson field
    invariant and maps the ball of radius ``q/a`` to that of radius ``q``,
    so the two samples share a law; they use independent streams.
    """
    if not alpha > d / 2:
        raise ValidationError("scaling needs alpha > d/2", condition="alpha > d/2")
    a = scaling_factor(beta, alpha, d)
    lhs = np.array([continuum_T_trunc(q, beta, ell, alpha, d, 0,
                                      field=PoissonField(alpha, d, q, _sub(seed, "lhs", i))).value
                    for i in range(samples)])
    rhs = np.array([continuum_T_trunc(q / a, 1.0, ell, alpha, d, 0,
                                      field=PoissonField(alpha, d, q / a, _sub(seed, "rhs", i))).value
                    for i in range(samples)])
    return lhs, a * a * rhs


def _sub(seed: int, label: str, i: int) -> int:
    return rng.label_seed(seed, f"{label}:{i}")


# -------------------------------------------------------- critical beta


def _annulus_top(alpha, d, r_in, r_out, ell, seed):
    """Top ``ell`` points of the Poisson field restricted to an annulus."""
    vol = unit_ball_volume(d) * (r_out ** d - r_in ** d)
    gen_w = rng.generator(seed, "annulus-weights")
    gen_y = rng.generator(seed, "annulus-locations")
    g = np.cumsum(gen_w.standard_exponential(ell))
    w = (vol / g) ** (1.0 / alpha)
    u = gen_y.standard_normal((ell, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = (r_in ** d + gen_y.random(ell) * (r_out ** d - r_in ** d)) ** (1.0 / d)
    return w, u * rad[:, None]


def nested_tops(alpha: float, d: int, q: float, ell: int, levels: int, seed: int) -> list[OrderStatistics]:
    """Top-``ell`` statistics of the balls ``q 2^-j``, j < levels, from one field.

    The field is built from independent dyadic annuli plus an innermost
    ball, so the statistics of all levels are jointly exact.
    """
    radii = [q * 2.0 ** -j for j in range(levels)]
    inner = PoissonField(alpha, d, radii[-1], rng.label_seed(seed, "core")).top(ell)
    w, y = inner.weights, inner.sites
    out = [inner]
    for j in range(levels - 2, -1, -1):
        aw, ay = _annulus_top(alpha, d, radii[j + 1], radii[j], ell, rng.label_seed(seed, f"ring{j}"))
        w = np.concatenate([w, aw])
        y = np.concatenate([y, ay])
        idx = np.argsort(-w, kind="stable")[:ell]
        w, y = w[idx], y[idx]
        out.append(OrderStatistics(w, y, radii[j], "continuum"))
    return out[::-1]


def _critical_ratio_level(top: OrderStatistics, d: int, ceiling: float) -> float:
    """``min_S hatEnt(S) / pi(S)`` over subsets of one level, or inf if >= ceiling.

    ``hatEnt >= L^2/2`` and ``pi(S) <= pi(all)``, so only subsets with a path
    of length at most ``sqrt(2 ceiling pi(all))`` can beat the ceiling; the
    sparse DP enumerates just those.
    """
    keep = np.flatnonzero(np.abs(top.sites).sum(axis=1) <= 1.0)
    if len(keep) == 0:
        return math.inf
    w, pts = top.weights[keep], top.sites[keep]
    top_ratio = ceiling
    for s, wi in zip(pts, w):
        top_ratio = min(top_ratio, hat_ent_N(s[None, :], d, 1.0).value / wi)
    if not math.isfinite(top_ratio):
        return math.inf
    sparse = _dp.BudgetDP(pts, math.sqrt(2.0 * top_ratio * w.sum()) * (1 + 1e-12))
    bits = (sparse.masks[:, None] >> np.arange(len(w))) & 1
    W = bits @ w
    lower = 0.5 * sparse.lengths ** 2 / W
    cand = np.flatnonzero(lower < top_ratio)
    cand = cand[np.argsort(lower[cand], kind="stable")]
    for i in cand:
        if lower[i] >= top_ratio:
            break
        h, _ = _hat_for_subset(pts, sparse.order(int(i)), d, 1.0)
        top_ratio = min(top_ratio, h / W[i])
    return top_ratio


def critical_ratio(tops: list[OrderStatistics], d: int, ceiling: float = math.inf) -> float:
    """Critical coupling of the truncated rate problem: positive value iff beta exceeds it."""
    def cheap_upper(t):
        l1 = np.abs(t.sites).sum(axis=1)
        ok = l1 <= 1.0
        if not ok.any():
            return math.inf
        return min(hat_ent_N(s[None, :], d, 1.0).value / w for s, w in zip(t.sites[ok], t.weights[ok]))

    def cheap_lower(t):
        l1 = np.abs(t.sites).sum(axis=1)
        ok = l1 <= 1.0
        if not ok.any():
            return math.inf
        r = np.linalg.norm(t.sites[ok], axis=1).min()
        return 0.5 * r * r / t.weights[ok].sum()

    best = ceiling
    ranked = sorted(tops, key=cheap_upper)
    for t in ranked:
        if cheap_lower(t) >= best:
            continue
        best = min(best, _critical_ratio_level(t, d, best))
    return best if best < ceiling else math.inf


def beta_c_estimate(alpha: float, d: int, q: float, ell: int, beta_grid, samples: int, seed: int,
                    levels: int = 1) -> list[dict]:
    """Per-field critical coupling on a grid.

    For each field the rate problem is positive exactly when beta exceeds
    ``min_S hatEnt(S)/pi(S)``; the grid estimate is the smallest grid value
    above it. ``levels > 1`` adds the nested balls ``q 2^-j`` (top ``ell``
    each), which is how small-scale configurations enter. Fields with no
    grid value activating are right-censored.
    """
    grid = np.sort(np.asarray(beta_grid, dtype=np.float64))
    rows = []
    for i in range(samples):
        tops = nested_tops(alpha, d, q, ell, levels, _sub(seed, "betac", i))
        ratio = critical_ratio(tops, d, ceiling=float(grid[-1]))
        above = grid[grid > ratio]
        censored = len(above) == 0
        rows.append(dict(field=i, ratio=ratio, beta_c=math.inf if censored else float(above[0]),
                         censored=censored, below_grid=bool(ratio < grid[0])))
    return rows


# -------------------------------------------------------------- tails


def T_normaliser(N: float, beta: float, r: float, alpha: float, d: int, ell: int | None = None) -> float:
    """``N (beta r^(d/alpha - 1))^2``, times ``ell^(2/d - 2/alpha)`` for the beyond-ell problem."""
    base = N * (beta * r ** (d / alpha - 1.0)) ** 2
    if ell is not None:
        base *= ell ** (2.0 / d - 2.0 / alpha)
    return base


def tail_exponent(alpha: float, d: int, ell: int | None = None) -> float:
    if ell is None:
        return alpha * d / (2 * (alpha + d))
    return alpha * ell * d / (2 * (alpha * ell + d))


def lattice_top(alpha: float, d: int, r: float, ell: int, seed: int) -> OrderStatistics:
    from .env import LatticeEnvironment

    env = LatticeEnvironment(d, alpha, seed, radius=r)
    sites, vals = env.ball()
    idx = np.argpartition(-vals, min(ell, len(vals) - 1))[: max(ell, 1)]
    return order_statistics(vals[idx], sites[idx], r)


def T_samples(alpha: float, d: int, N: float, r: float, beta: float, ell: int, replicas: int,
              seed: int, beyond: bool = False, pool: int = 20) -> np.ndarray:
    """Discrete truncated problem values over independent lattice environments.

    For the beyond-``ell`` problem the weights ranked ``ell+1 .. ell+pool``
    are used (exact when they are all of the remaining ones).
    """
    out = np.empty(replicas)
    for i in range(replicas):
        stats = lattice_top(alpha, d, r, ell + (pool if beyond else 0), _sub(seed, "T", i))
        if beyond:
            out[i] = discrete_T_beyond(stats, N, beta, ell, d).value
        else:
            out[i] = discrete_T(stats, N, beta, ell, d).value
    return out


def tail_experiment_T(alpha: float, d: int, N: float, r: float, beta: float, ell: int, t_grid,
                      replicas: int, seed: int, c: float | None = None, beyond: bool = False,
                      z: float = 1.96) -> dict:
    """Empirical ``P(T >= t N (beta r^(d/alpha-1))^2)`` against ``c t^-exponent``.

    Returns the table rows, the constant each row needs (Wilson upper limit
    at ``z``, used for calibration), and the log-log slope over the nonzero entries.
    """
    vals = T_samples(alpha, d, N, r, beta, ell, replicas, seed, beyond)
    norm = T_normaliser(N, beta, r, alpha, d, ell if beyond else None)
    expo = tail_exponent(alpha, d, ell if beyond else None)
    rows = []
    for t in t_grid:
        hits = int((vals >= t * norm).sum())
        lo, hi = wilson_interval(hits, replicas, z)
        row = dict(t=float(t), hits=hits, p=hits / replicas, wilson_lo=lo, wilson_hi=hi,
                   c_needed=hi * t ** expo, zero_hit=hits == 0, replicas=replicas, seed=seed)
        if c is not None:
            row["bound"] = c * t ** -expo
            row["holds"] = row["p"] <= row["bound"]
        rows.append(row)
    nz = [(r_["t"], r_["p"]) for r_ in rows if r_["p"] > 0]
    slope = loglog_slope(*zip(*nz)) if len(nz) >= 2 else math.nan
    return dict(rows=rows, slope=slope, exponent=expo, values=vals, normaliser=norm)
