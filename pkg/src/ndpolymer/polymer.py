"""Partition functions and observables of the non-directed polymer.

The energy of a path is ``beta * sum_{x in R_N} (omega_x - h)``: each
visited site counts once. ``partition_exact`` enumerates all ``(2d)^N``
paths; ``partition_mc`` averages over simulated walks, optionally drawn
from a mixture of walk bridges aimed at high-gain sites (importance sampling
with exact likelihood ratios) so that super-diffusive paths are reachable.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import special

from . import rng
from ._hashset import find_or_insert, new_table, pack, packing
from .env import LatticeEnvironment, pareto_mean, pareto_variance
from .errors import NumericalDiagnostic, ValidationError, WindowError
from .model import ModelParams, Region, classify_regime, coupling, wandering_exponent
from .stats import batch_means, effective_sample_size, weighted_median
from .walk import normaliser_v

PATH_COUNT_MAX = 10 ** 8
ESS_WARN_FRACTION = 0.5
FLUCT_ESS_MIN = 100
OVERSHOOT = float(-special.zeta(0.5) / math.sqrt(2 * math.pi))


@dataclass(frozen=True)
class PartitionEstimate:
    logZ: float
    method: str  # exact | mc
    N: int
    replicas: int = 0
    stderr: float = 0.0  # of Z; may overflow to inf when log Z is large
    rel_stderr: float = 0.0
    seed: int | None = None
    env_seed: int | None = None
    params: ModelParams | None = None
    ess: float = math.nan
    flags: tuple = ()

    @property
    def Z(self) -> float:
        return math.exp(self.logZ)


@dataclass(frozen=True)
class GibbsSample:
    """Weighted replicas: Gibbs weight ``exp(log_weights)`` up to ``exp(logZ)``."""

    log_weights: np.ndarray
    max_disp: np.ndarray
    range_size: np.ndarray
    logZ: float
    seed: int
    flags: tuple = ()

    @property
    def ess(self) -> float:
        return effective_sample_size(self.log_weights)

    def mean(self, values) -> float:
        w = np.exp(self.log_weights - self.log_weights.max())
        return float((w * np.asarray(values)).sum() / w.sum())


# ------------------------------------------------------------- exact


@njit(cache=True)
def _exact_dfs(grid, N, d, beta):
    """Streaming log-sum-exp of path energies over all (2d)^N paths."""
    side = grid.shape[0]
    flat = grid.ravel()
    stride = np.empty(d, np.int64)
    s = 1
    for a in range(d - 1, -1, -1):
        stride[a] = s
        s *= side
    centre = 0
    for a in range(d):
        centre += N * stride[a]
    count = np.zeros(flat.shape[0], np.int64)
    dirs = np.full(N + 1, -1, np.int64)
    where = np.empty(N + 1, np.int64)
    energy = np.empty(N + 1)
    where[0] = centre
    count[centre] = 1
    energy[0] = beta * flat[centre]
    top = -np.inf
    acc = 0.0
    depth = 0
    if N == 0:
        return energy[0]
    while depth >= 0:
        # undo the child placed from this depth, if any
        if dirs[depth] >= 0:
            count[where[depth + 1]] -= 1
        dirs[depth] += 1
        if dirs[depth] == 2 * d:
            dirs[depth] = -1
            depth -= 1
            continue
        a = dirs[depth] >> 1
        sg = 1 - 2 * (dirs[depth] & 1)
        nxt = where[depth] + sg * stride[a]
        where[depth + 1] = nxt
        e = energy[depth]
        if count[nxt] == 0:
            e += beta * flat[nxt]
        count[nxt] += 1
        energy[depth + 1] = e
        if depth + 1 == N:
            # leaf: the undo at the top of the loop removes it again
            if e > top:
                acc = acc * math.exp(top - e) + 1.0
                top = e
            else:
                acc += math.exp(e - top)
        else:
            depth += 1
    return top + math.log(acc) - N * math.log(2 * d)


def path_count(N: int, d: int) -> int:
    return (2 * d) ** N


def partition_exact(env: LatticeEnvironment, N: int, beta: float, h: float = 0.0,
                    d: int | None = None) -> PartitionEstimate:
    """``Z = E[exp(beta sum_{x in R_N} (omega_x - h))]`` by enumerating every path."""
    d = env.d if d is None else d
    if d != env.d:
        raise ValidationError("dimension mismatch", condition="d == env.d")
    if N < 0:
        raise ValidationError("N must be >= 0", condition="N >= 0")
    if path_count(N, d) > PATH_COUNT_MAX:
        raise ValidationError(f"(2d)^N = {path_count(N, d)} paths exceeds {PATH_COUNT_MAX}",
                              condition="(2d)^N <= 1e8")
    grid = np.ascontiguousarray(env.grid(N) - h)
    logz = _exact_dfs(grid, int(N), int(d), float(beta))
    return PartitionEstimate(float(logz), "exact", int(N), env_seed=env.seed)


# ---------------------------------------------------------------- MC


@dataclass(frozen=True, eq=False)
class Proposal:
    """Importance-sampling law for d = 2: the simple walk mixed with bridges.

    Component ``k`` runs the simple walk conditioned on ``S_{t_k} = x_k``
    (a Doob transform) and continues freely after ``t_k``. Its density with
    respect to the simple walk is ``1{S_t = x} / P(S_t = x)``, so the mixture
    likelihood ratio is exact and cheap. In the rotated coordinates
    ``(y1 + y2, y1 - y2)`` the planar walk is two independent +-1 walks, so
    each bridge is a pair of one-dimensional bridges.
    """

    targets: np.ndarray  # (K, 2) integer sites
    times: np.ndarray  # (K,) bridge lengths, parity-matched
    probs: np.ndarray  # (K + 1,), entry 0 is the simple walk
    label: str = "bridges"

    def __post_init__(self):
        if len(self.probs) != len(self.targets) + 1 or np.any(self.probs <= 0):
            raise ValidationError("need one positive probability per component plus the simple walk",
                                  condition="probs > 0")
        l1 = np.abs(self.targets).sum(axis=1) if len(self.targets) else np.zeros(0)
        if np.any(l1 > self.times) or np.any((l1 - self.times) % 2 != 0):
            raise ValidationError("bridge targets must be reachable at their times",
                                  condition="|x|_1 <= t, parity")

    @property
    def size(self) -> int:
        return len(self.targets)


def _log_p1(m, z):
    """``log P(one-dimensional +-1 walk is at z after m steps)``, -inf if impossible."""
    if abs(z) > m or (m + z) % 2:
        return -math.inf
    k = (m + z) // 2
    return math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1) - m * math.log(2.0)


_log_p1_jit = njit(cache=True)(_log_p1)


@njit(cache=True)
def _log_p2(m, y1, y2):
    return _log_p1_jit(m, y1 + y2) + _log_p1_jit(m, y1 - y2)


def log_p2(m: int, y) -> float:
    """Exact ``log P(S_m = y)`` for the planar simple walk."""
    return float(_log_p2(int(m), int(y[0]), int(y[1])))


@njit(cache=True)
def _box_scores(env_seed, inv_alpha, shift, h, beta, N, R, d, k):
    """Top ``k`` sites of the box ``[-R, R]^d`` by ``beta (omega - h) - (d/2)|x|^2/N``."""
    best = np.full(k, -np.inf)
    where = np.zeros((k, d), np.int64)
    pos = np.full(d, -R, np.int64)
    while True:
        u = rng.to_unit_open(rng.mix64(rng.site_key_1(env_seed, pos)))
        r2 = 0.0
        for c in range(d):
            r2 += pos[c] * pos[c]
        sc = beta * (u ** (-inv_alpha) + shift - h) - 0.5 * d * r2 / N
        if sc > best[k - 1]:
            j = k - 1
            while j > 0 and best[j - 1] < sc:
                best[j] = best[j - 1]
                where[j] = where[j - 1]
                j -= 1
            best[j] = sc
            where[j] = pos
        c = d - 1
        while c >= 0:
            pos[c] += 1
            if pos[c] <= R:
                break
            pos[c] = -R
            c -= 1
        if c < 0:
            break
    return where, best


def best_single_sites(env: LatticeEnvironment, N: int, beta: float, h: float, radius: int,
                      top: int) -> tuple[np.ndarray, np.ndarray]:
    """Sites of the box of half-width ``radius`` with the largest one-site gain.

    The gain is ``beta (omega_x - h) - (d/2)|x|^2/N``. Overrides are ignored.
    """
    return _box_scores(np.uint64(env.seed), 1.0 / env.alpha, float(env.shift), float(h),
                       float(beta), float(N), int(radius), env.d, int(top))


def targeted_proposal(env: LatticeEnvironment, grid, betas, h: float, xi: float,
                      radius_factor: float = 2.0, top: int = 8,
                      fractions=(0.25, 0.5, 0.75, 1.0), simple_weight: float = 0.5) -> Proposal:
    """Bridges to the best single-site gains of each N in ``grid``.

    For each N the ``top`` sites within ``radius_factor N^xi`` are bridged to
    at times ``f N``. Only the proposal looks at the environment; the weights
    stay exact, so estimates are unbiased whatever the targets, and the
    simple walk keeps the share ``simple_weight`` (defensive mixture).
    """
    if env.d != 2:
        raise ValidationError("bridge proposals are implemented for d = 2", condition="d == 2")
    targets, times = [], []
    for n, b in zip(grid, betas):
        radius = min(int(n), max(1, int(radius_factor * n ** xi)))
        where, _ = best_single_sites(env, int(n), b, h, radius, top)
        for x in where:
            l1 = int(np.abs(x).sum())
            for f in fractions:
                t = max(int(f * n), l1)
                t += (t - l1) % 2
                if t <= n:
                    targets.append(x)
                    times.append(t)
    if not targets:
        return Proposal(np.zeros((0, 2), np.int64), np.zeros(0, np.int64), np.ones(1))
    pairs = sorted({(int(x[0]), int(x[1]), int(t)) for x, t in zip(targets, times)})
    K = len(pairs)
    probs = np.concatenate([[simple_weight], np.full(K, (1.0 - simple_weight) / K)])
    return Proposal(np.array([p[:2] for p in pairs], np.int64), np.array([p[2] for p in pairs], np.int64),
                    probs, "bridges")


@njit(cache=True)
def _site_value(env_seed, inv_alpha, shift, pos, okeys, ovals, bits, off):
    if okeys.shape[0] > 0:
        key = pack(pos, bits, off)
        i = np.searchsorted(okeys, key)
        if i < okeys.shape[0] and okeys[i] == key:
            return ovals[i] + shift
    u = rng.to_unit_open(rng.mix64(rng.site_key_1(env_seed, pos)))
    return u ** (-inv_alpha) + shift


@njit(cache=True)
def _mc_engine(walk_key, replicas, grid, d, env_seed, inv_alpha, shift, h, okeys, ovals,
               bits, off, size, targets, times, logp, logp0):
    """Walk replicas; ``targets``/``times``/``logp`` describe bridge components (d = 2 only)."""
    n_max = grid[-1]
    G = grid.shape[0]
    K = targets.shape[0]
    energy = np.zeros((replicas, G))
    maxd = np.zeros((replicas, G), np.int64)
    rsize = np.zeros((replicas, G), np.int64)
    loglr = np.zeros((replicas, G))
    keys = np.full(size, -1, np.int64)
    stamps = np.zeros(size, np.int64)
    pos = np.zeros(d, np.int64)
    hit = np.zeros(K, np.bool_)
    lk = np.empty(K + 1)
    # log P(S_t = x) of each bridge, and cumulative mixture probabilities
    lpt = np.empty(K)
    for k in range(K):
        lpt[k] = _log_p2(times[k], targets[k, 0], targets[k, 1])
    cum = np.empty(K + 1)
    acc = 0.0
    for k in range(K + 1):
        acc += math.exp(logp0 if k == 0 else logp[k - 1])
        cum[k] = acc
    for r in range(replicas):
        key = rng.stream_key(walk_key, np.uint64(r))
        comp = -1
        if K > 0:
            # the component is drawn with a counter beyond the step range
            u = rng.to_unit_open(rng.draw_u64(key, np.uint64(0xFFFFFFFFFFFF))) * cum[K]
            j = 0
            while j < K and u > cum[j]:
                j += 1
            comp = j - 1
        stamp = r + 1
        pos[:] = 0
        hit[:] = False
        find_or_insert(keys, stamps, stamp, pack(pos, bits, off))
        e = _site_value(env_seed, inv_alpha, shift, pos, okeys, ovals, bits, off) - h
        count = 1
        far = 0
        g = 0
        for n in range(1, n_max + 1):
            x = rng.to_unit_open(rng.draw_u64(key, n - 1))
            if comp >= 0 and n <= times[comp]:
                # two independent one-dimensional bridges in rotated coordinates
                m = times[comp] - n + 1
                su = targets[comp, 0] + targets[comp, 1] - (pos[0] + pos[1])
                sv = targets[comp, 0] - targets[comp, 1] - (pos[0] - pos[1])
                pu = (m + su) / (2.0 * m)
                pv = (m + sv) / (2.0 * m)
                # split x into two uniforms: first bit decides u, the rest v
                if x <= pu:
                    du = 1
                    xv = x / pu
                else:
                    du = -1
                    xv = (x - pu) / (1.0 - pu)
                dv = 1 if xv <= pv else -1
                a = 0 if du == dv else 1
                sg = du
            else:
                pick = min(np.int64(x * 2 * d), 2 * d - 1)
                a = pick >> 1
                sg = 1 - 2 * (pick & 1)
            pos[a] += sg
            if abs(pos[a]) > far:
                far = abs(pos[a])
            _, new = find_or_insert(keys, stamps, stamp, pack(pos, bits, off))
            if new:
                e += _site_value(env_seed, inv_alpha, shift, pos, okeys, ovals, bits, off) - h
                count += 1
            for k in range(K):
                if times[k] == n and pos[0] == targets[k, 0] and pos[1] == targets[k, 1]:
                    hit[k] = True
            while g < G and grid[g] == n:
                energy[r, g] = e
                maxd[r, g] = far
                rsize[r, g] = count
                if K > 0:
                    # log dQ/dP restricted to the first n steps
                    lk[0] = logp0
                    top = logp0
                    for k in range(K):
                        if times[k] <= n:
                            v = logp[k] - lpt[k] if hit[k] else -np.inf
                        else:
                            v = logp[k] + _log_p2(times[k] - n, targets[k, 0] - pos[0],
                                                  targets[k, 1] - pos[1]) - lpt[k]
                        lk[k + 1] = v
                        if v > top:
                            top = v
                    tot = 0.0
                    for k in range(K + 1):
                        tot += math.exp(lk[k] - top)
                    loglr[r, g] = top + math.log(tot)
                g += 1
        while g < G:  # N = 0 entries
            energy[r, g] = e
            rsize[r, g] = 1
            g += 1
    return energy, maxd, rsize, loglr


def _overrides(env: LatticeEnvironment, bits: int, off: int):
    if not env.overrides:
        return np.zeros(0, np.int64), np.zeros(0)
    keys, vals = [], []
    for site, v in env.overrides.items():
        c = np.asarray(site, np.int64)
        if np.abs(c).max() >= off:
            raise ValidationError("override site outside the packed range", condition="|x| < 2^(62/d-1)")
        k = 0
        for ci in c:
            k = (k << bits) | int(ci + off)
        keys.append(k)
        vals.append(v)
    order = np.argsort(keys)
    return np.array(keys, np.int64)[order], np.array(vals)[order]


@dataclass(frozen=True)
class WalkEnsemble:
    """Per-replica centred range sums, displacement, range size and log dQ/dP at each grid N."""

    grid: np.ndarray
    centred_sum: np.ndarray  # sum over R_n of (omega - h)
    max_disp: np.ndarray
    range_size: np.ndarray
    log_lr: np.ndarray
    seed: int

    def log_weights(self, g: int, beta: float) -> np.ndarray:
        return beta * self.centred_sum[:, g] - self.log_lr[:, g]


def walk_ensemble(env: LatticeEnvironment, N_grid, h: float, replicas: int, seed: int,
                  proposal: Proposal | None = None) -> WalkEnsemble:
    """Simulate ``replicas`` walks once and record observables at every N of the grid."""
    grid = np.sort(np.atleast_1d(np.asarray(N_grid, dtype=np.int64)))
    if grid[0] < 0:
        raise ValidationError("N must be >= 0", condition="N >= 0")
    d = env.d
    bits, off = packing(d)
    if grid[-1] >= off:
        raise ValidationError("N too large for packed site keys", condition="N < 2^(62/d - 1)")
    okeys, ovals = _overrides(env, bits, off)
    size = len(new_table(int(grid[-1]) + 1)[0])
    if proposal is None or proposal.size == 0:
        targets, times, logp, logp0 = np.zeros((0, 2), np.int64), np.zeros(0, np.int64), np.zeros(0), 0.0
    else:
        if d != 2:
            raise ValidationError("bridge proposals are implemented for d = 2", condition="d == 2")
        pr = proposal.probs / proposal.probs.sum()
        targets, times = proposal.targets, proposal.times
        logp, logp0 = np.log(pr[1:]), float(np.log(pr[0]))
    key = np.uint64(rng.label_seed(seed, "polymer-walk"))
    energy, maxd, rsize, loglr = _mc_engine(
        key, int(replicas), grid, d, np.uint64(env.seed), 1.0 / env.alpha, float(env.shift), float(h),
        okeys, ovals, bits, off, size, targets, times, logp, logp0)
    return WalkEnsemble(grid, energy, maxd, rsize, loglr, seed)


def _restriction_mask(max_disp: np.ndarray, restriction) -> np.ndarray:
    if restriction is None or restriction == "none":
        return np.ones(len(max_disp), bool)
    kind, *bounds = restriction
    if kind == "le":
        return max_disp <= bounds[0]
    if kind == "between":
        return (max_disp >= bounds[0]) & (max_disp < bounds[1])
    raise ValidationError(f"unknown restriction {restriction!r}",
                          condition="restriction in {none, ('le', m), ('between', a, b)}")


def _estimate_from_logs(logw: np.ndarray, keep: np.ndarray, n_batches: int = 1000):
    """log of the mean of ``exp(logw) 1{keep}`` and its (absolute, relative) stderr."""
    vals = np.where(keep, logw, -np.inf)
    top = vals.max()
    if not np.isfinite(top):
        return -math.inf, 0.0, math.nan, 0.0
    scaled = np.exp(vals - top)
    m, se = batch_means(scaled, n_batches)
    logz = top + math.log(m)
    rel = se / m
    with np.errstate(over="ignore"):
        z_se = float(np.exp(logz) * rel)
    share = scaled.max() / scaled.sum()
    return logz, z_se, rel, share


def partition_mc(env: LatticeEnvironment, N: int, beta: float, h: float, replicas: int, seed: int,
                 restriction=None, proposal: Proposal | None = None, n_batches: int = 1000,
                 params: ModelParams | None = None) -> PartitionEstimate:
    """MC estimate of ``Z`` (or of ``Z(restriction)``) with batch-means errors.

    ``restriction`` is ``None``, ``('le', m)`` for ``M_N <= m`` or
    ``('between', a, b)`` for ``a <= M_N < b``.
    """
    if replicas < 1000:
        raise ValidationError("partition_mc needs at least 1000 replicas", condition="replicas >= 1e3")
    ens = walk_ensemble(env, [N], h, replicas, seed, proposal)
    logw = ens.log_weights(0, beta)
    keep = _restriction_mask(ens.max_disp[:, 0], restriction)
    logz, z_se, rel, share = _estimate_from_logs(logw, keep, n_batches)
    flags = []
    if share > ESS_WARN_FRACTION:
        flags.append("heavy-weight")
        warnings.warn(f"top replica carries {share:.0%} of the weight", RuntimeWarning, stacklevel=2)
    if not keep.any():
        flags.append("zero-hit")
    ess = effective_sample_size(np.where(keep, logw, -np.inf)) if keep.any() else 0.0
    return PartitionEstimate(float(logz), "mc", int(N), int(replicas), z_se, rel, seed, env.seed,
                             params, ess, tuple(flags))


def gibbs_sample(env: LatticeEnvironment, N: int, beta: float, h: float, replicas: int, seed: int,
                 proposal: Proposal | None = None) -> GibbsSample:
    ens = walk_ensemble(env, [N], h, replicas, seed, proposal)
    logw = ens.log_weights(0, beta)
    top = logw.max()
    logz = top + math.log(np.exp(logw - top).mean())
    flags = ("low-ess",) if effective_sample_size(logw) < FLUCT_ESS_MIN else ()
    return GibbsSample(logw, ens.max_disp[:, 0], ens.range_size[:, 0], float(logz), seed, flags)


# -------------------------------------------------- region statistics


@dataclass(frozen=True)
class RegionStatistic:
    value: float
    logZ: PartitionEstimate
    normalisation: float
    extra: dict = field(default_factory=dict)


def _environment(p: ModelParams, env: LatticeEnvironment | int) -> LatticeEnvironment:
    if isinstance(env, LatticeEnvironment):
        if env.d != p.d or env.alpha != p.alpha:
            raise ValidationError("environment does not match the model", condition="env.(d, alpha) == params")
        return env
    return LatticeEnvironment(p.d, p.alpha, int(env))


def region_A_statistic(p: ModelParams, N: int, env, replicas: int, seed: int = 0,
                       proposal: Proposal | None = None) -> RegionStatistic:
    """``(beta_N N^(d/alpha))^-1 log Z`` at ``h = 0``, plus the bound on the ``h`` correction."""
    region = classify_regime(p)
    if region not in (Region.A, Region.BOUNDARY_AB):
        raise WindowError(f"region A statistic needs region A, got {region.value}",
                          condition="gamma <= (d - alpha)/alpha")
    env = _environment(p, env)
    b = coupling(p, N)
    est = partition_mc(env, N, b, 0.0, replicas, seed, proposal=proposal, params=p)
    norm = b * N ** (p.d / p.alpha)
    return RegionStatistic(est.logZ / norm, est, norm,
                           dict(h_correction_bound=abs(p.h) * N ** ((p.alpha - p.d) / p.alpha)))


def crude_upper_bound_A(p: ModelParams, N: int, env: LatticeEnvironment) -> float:
    """``(beta_N N^(d/alpha))^-1 beta_N * (sum of the weights within distance N)``."""
    sites = np.stack(np.meshgrid(*([np.arange(-N, N + 1)] * p.d), indexing="ij"), -1).reshape(-1, p.d)
    sites = sites[np.abs(sites).sum(axis=1) <= N]
    return float(env.values_at(sites).sum() / N ** (p.d / p.alpha))


def region_B_statistic(p: ModelParams, N: int, env, replicas: int, seed: int = 0,
                       proposal: Proposal | None = None) -> RegionStatistic:
    """``N^-(2 xi - 1) log Z`` at ``h = mu``."""
    if classify_regime(p) != Region.B:
        raise WindowError("region B statistic needs region B", condition="(d-alpha)/alpha < gamma < d/(2 alpha)")
    if p.alpha <= 1:
        raise WindowError("h = mu needs alpha > 1", condition="alpha > 1")
    env = _environment(p, env)
    xi = wandering_exponent(p)
    est = partition_mc(env, N, coupling(p, N), pareto_mean(p.alpha), replicas, seed,
                       proposal=proposal, params=p)
    norm = N ** (2 * xi - 1)
    return RegionStatistic(est.logZ / norm, est, norm, dict(xi=xi))


def gaussian_scale(N: int, d: int) -> float:
    """``a_N``: ``N^(1/4)`` (d=3), ``(log N)^(1/2)`` (d=4), 1 (d>=5)."""
    if d == 3:
        return N ** 0.25
    if d == 4:
        return math.sqrt(math.log(N))
    return 1.0


def region_C_window(alpha: float, d: int, variant: str) -> None:
    if variant == "gaussian":
        if d not in (3, 4) or not alpha > max(2.0, d / 2):
            raise WindowError("gaussian variant needs d in {3,4} and alpha > max(2, d/2)",
                              condition="d in {3,4}, alpha > 2 v d/2")
    elif variant == "chi":
        if d < 5 or not alpha > d / (d - 2):
            raise WindowError("chi variant needs d >= 5 and alpha > d/(d-2)",
                              condition="d >= 5, alpha > d/(d-2)")
    elif variant == "W":
        beta_pos = d / 2 < alpha < 2 and d in (2, 3)
        beta_zero = alpha < min(d / 2, d / (d - 2) if d > 2 else math.inf) and alpha != 1
        if not (beta_pos or beta_zero):
            raise WindowError("W variant needs alpha in (d/2, 2) with d in {2,3}, "
                              "or alpha < min(d/2, d/(d-2)), alpha != 1",
                              condition="W finiteness window")
    else:
        raise ValidationError(f"unknown variant {variant!r}", condition="variant in {gaussian, chi, W}")


def region_C_statistic(p: ModelParams, N: int, env, replicas: int, variant: str, seed: int = 0,
                       range_replicas: int = 10_000) -> RegionStatistic:
    """Region C rescaled log-partition function.

    gaussian: ``(a_N beta_N)^-1 (log Z - Var(omega) beta_N^2 E|R_N| / 2)`` with
    ``E|R_N|`` estimated by MC; chi: ``beta_N^-1 log Z``; W:
    ``v_N / (beta_N N^(d/(2 alpha))) log Z``. ``h = mu`` when ``alpha > 1``.
    """
    if classify_regime(p) not in (Region.C, Region.BOUNDARY_BC):
        raise WindowError("region C statistic needs region C", condition="region C")
    region_C_window(p.alpha, p.d, variant)
    env = _environment(p, env)
    b = coupling(p, N)
    h = pareto_mean(p.alpha) if p.alpha > 1 else p.h
    est = partition_mc(env, N, b, h, replicas, seed, params=p)
    extra = {}
    if variant == "gaussian":
        er = expected_range(N, p.d, range_replicas, rng.label_seed(seed, "range"))
        centre = 0.5 * pareto_variance(p.alpha) * b * b * er[0]
        norm = gaussian_scale(N, p.d) * b
        value = (est.logZ - centre) / norm
        extra = dict(expected_range=er[0], expected_range_stderr=er[1], centring=centre,
                     centring_stderr=0.5 * pareto_variance(p.alpha) * b * b * er[1] / norm)
    elif variant == "chi":
        norm = b
        value = est.logZ / norm
    else:
        norm = b * N ** (p.d / (2 * p.alpha)) / normaliser_v(N, p.d)
        value = est.logZ / norm
    return RegionStatistic(float(value), est, float(norm), extra)


def expected_range(N: int, d: int, replicas: int, seed: int) -> tuple[float, float]:
    """MC mean and stderr of ``|R_N|`` for the simple walk."""
    env = LatticeEnvironment(d, 1.0, 0)
    ens = walk_ensemble(env, [N], 0.0, replicas, seed)
    return batch_means(ens.range_size[:, 0].astype(np.float64))


# ------------------------------------------------------ fluctuations


@dataclass(frozen=True)
class FluctuationFit:
    slope: float
    ci: tuple
    N_grid: np.ndarray
    medians: np.ndarray  # median over environments of the Gibbs median of M_N
    per_env: np.ndarray  # (environments, len(N_grid))
    ess_min: np.ndarray  # smallest ESS over environments, per N
    flags: tuple = ()

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


def _slope(N_grid, med) -> float:
    return float(np.polyfit(np.log(N_grid), np.log(med), 1)[0])


def fluctuation_exponent(p: ModelParams, N_grid, environments: int, replicas: int, seed: int,
                         proposal: str = "plain", quantile_band: float = 0.95,
                         bootstrap: int = 2000, env_filter=None, zero_coupling: bool = False,
                         radius_factor: float = 2.0, overshoot_correction: bool = True) -> FluctuationFit:
    """Slope of log(median M_N) against log N under the Gibbs measure.

    Each environment runs one set of walks to ``max(N_grid)`` (common random
    numbers across N). The per-environment statistic is the self-normalised
    Gibbs median of ``M_N`` (mid-distribution interpolated, so lattice
    rounding does not bias the slope); the curve is the median over environments and
    the CI is a percentile bootstrap over environments. ``proposal`` is
    ``'plain'`` (simple walks) or ``'targeted'`` (bridge mixture aimed at the
    best single-site gains, see :func:`targeted_proposal`). ``env_filter``
    (environment -> bool) restricts the environments used, e.g. to those
    whose coupled variational estimate is positive. ``zero_coupling`` runs
    the same pipeline at beta = 0. ``overshoot_correction`` adds the
    lattice overshoot ``rho / sqrt(d)`` (``rho = -zeta(1/2)/sqrt(2 pi)``, the
    gap between the maximum of a walk with unit-variance steps and of
    Brownian motion), which removes the ``1/sqrt(N)`` drift from the slope.
    """
    grid = np.sort(np.asarray(N_grid, dtype=np.int64))
    if len(grid) < 4:
        raise ValidationError("need at least 4 grid points", condition="len(N_grid) >= 4")
    if not np.allclose(grid[1:] / grid[:-1], 2.0):
        raise ValidationError("N grid must be a doubling sequence", condition="N-doubling grid")
    if proposal not in ("plain", "targeted"):
        raise ValidationError(f"unknown proposal {proposal!r}", condition="proposal in {plain, targeted}")
    h = pareto_mean(p.alpha) if p.alpha > 1 else p.h
    betas = [0.0 if zero_coupling else coupling(p, int(n)) for n in grid]
    xi = wandering_exponent(p)
    shift = OVERSHOOT / math.sqrt(p.d) if overshoot_correction else 0.0
    rows, ess = [], []
    for e in range(environments):
        env = LatticeEnvironment(p.d, p.alpha, rng.label_seed(seed, f"fluct-env:{e}"))
        if env_filter is not None and not env_filter(env):
            continue
        prop = None
        if proposal == "targeted" and not zero_coupling:
            prop = targeted_proposal(env, grid, betas, h, xi, radius_factor)
        ens = walk_ensemble(env, grid, h, replicas, rng.label_seed(seed, f"fluct-walk:{e}"), prop)
        med, es = [], []
        for g, b in enumerate(betas):
            lw = ens.log_weights(g, b)
            med.append(weighted_median(ens.max_disp[:, g].astype(np.float64), lw, interpolate=True) + shift)
            es.append(effective_sample_size(lw))
        rows.append(med)
        ess.append(es)
    if not rows:
        raise NumericalDiagnostic("no environment passed the filter")
    per_env = np.array(rows)
    ess = np.array(ess)
    medians = np.median(per_env, axis=0)
    slope = _slope(grid, medians)
    gen = rng.generator(seed, "fluct-bootstrap")
    boots = np.empty(bootstrap)
    for b in range(bootstrap):
        idx = gen.integers(len(per_env), size=len(per_env))
        boots[b] = _slope(grid, np.median(per_env[idx], axis=0))
    lo = (1 - quantile_band) / 2
    ci = (float(np.quantile(boots, lo)), float(np.quantile(boots, 1 - lo)))
    ess_min = ess.min(axis=0)
    flags = ("low-ess",) if np.any(ess_min < FLUCT_ESS_MIN) else ()
    return FluctuationFit(slope, ci, grid, medians, per_env, ess_min, flags)
