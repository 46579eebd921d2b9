"""Region C limit variables: the Green-weighted sum and compensated Poisson integrals.

Every sampler returns values together with the truncation channels that
bound what the cutoffs leave out, never a bare number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate, special

from . import rng
from ._hashset import packing
from .env import pareto_mean, pareto_variance, unit_ball_volume
from .errors import ValidationError, WindowError
from .walk import escape_probability, green_function

# ------------------------------------------------------------ windows


def chi_window(alpha: float, d: int) -> None:
    if d < 5:
        raise WindowError(f"the Green-weighted sum needs d >= 5, got d={d}", condition="d >= 5")
    if not alpha > d / (d - 2):
        raise WindowError(f"alpha must exceed d/(d-2) = {d / (d - 2):.4g} for the sum to converge",
                          condition="alpha > d/(d-2)")


def w_window(alpha: float, d: int, beta: float) -> None:
    """Finiteness windows of the compensated Poisson integrals."""
    if beta < 0:
        raise ValidationError("beta must be >= 0", condition="beta >= 0")
    if beta > 0:
        if d not in (2, 3):
            raise WindowError(f"beta > 0 needs d in {{2, 3}}, got d={d}", condition="d in {2,3}")
        if not d / 2 < alpha < 2:
            raise WindowError(f"beta > 0 needs alpha in (d/2, 2) = ({d / 2}, 2)",
                              condition="d/2 < alpha < 2")
        return
    if 0 < alpha < 1:
        return
    if 1 < alpha < 2:
        if d > 2 and not alpha < d / (d - 2):
            raise WindowError(f"beta = 0 with alpha in (1, 2) needs alpha < d/(d-2) = {d / (d - 2):.4g}",
                              condition="alpha < d/(d-2)")
        return
    raise WindowError("beta = 0 needs alpha in (0, 1) or (1, 2)", condition="alpha in (0,1) u (1,2)")


# ------------------------------------------------------------ profile


def f_radial(r, d: int) -> np.ndarray:
    """Vectorised radial profile ``f(|x| = r)``."""
    r = np.asarray(r, dtype=np.float64)
    if d == 2:
        return special.exp1(r * r / 2.0)
    a = d * r * r / 2.0
    s = d / 2.0 - 1.0
    c = 2.0 * escape_probability(d) * (2 * math.pi / d) ** (-d / 2)
    return c * a ** (-s) * special.gammaincc(s, a) * special.gamma(s)


@lru_cache(maxsize=256)
def f_ball_integral(K: float, d: int, power: int = 1) -> tuple[float, float]:
    """``int_{|x| <= K} f(x)^power dx`` by radial quadrature; returns (value, abserr)."""
    surface = d * unit_ball_volume(d)
    val, err = integrate.quad(lambda r: f_radial(r, d) ** power * r ** (d - 1), 0.0, K,
                              limit=200, epsabs=1e-13, epsrel=1e-11)
    return surface * val, surface * err


def f_ball_integral_mc(K: float, d: int, samples: int, seed: int) -> tuple[float, float]:
    """Hit-free MC estimate of ``int_{B_K} f``: uniform points, ``Vol * mean f``."""
    from .env import uniform_in_ball

    pts = uniform_in_ball(samples, d, rng.generator(seed, "f-ball")) * K
    vals = f_radial(np.linalg.norm(pts, axis=1), d)
    vol = unit_ball_volume(d) * K ** d
    return float(vol * vals.mean()), float(vol * vals.std(ddof=1) / math.sqrt(samples))


# --------------------------------------------------------- compensator


@dataclass(frozen=True)
class CompensatedIntegralSpec:
    alpha: float
    d: int
    K: float = 6.0
    eps: float | None = None  # weight cutoff; None -> default
    beta: float = 0.0
    tol: float = 1e-10

    def __post_init__(self):
        if not self.K > 0:
            raise ValidationError("K must be > 0", condition="K > 0")
        if self.eps is not None and self.eps < 0:
            raise ValidationError("eps must be >= 0", condition="eps >= 0")
        if self.beta < 0:
            raise ValidationError("beta must be >= 0", condition="beta >= 0")

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.d) * self.K ** self.d

    @property
    def weight_cutoff(self) -> float:
        return default_eps(self.alpha, self.d, self.K) if self.eps is None else self.eps


def default_eps(alpha: float, d: int, K: float) -> float:
    """``10^-2`` times the median of the largest weight in ``B_K``."""
    vol = unit_ball_volume(d) * K ** d
    return 1e-2 * (vol / math.log(2.0)) ** (1.0 / alpha)


def compensator_integral(spec: CompensatedIntegralSpec) -> float:
    """``int_{B_K x (eps, inf)} w f(x) eta(dx, dw)`` for alpha > 1.

    For alpha < 1 that integral diverges at large w and no compensation is
    used; the function then returns the mean mass of the dropped small
    weights, ``int_{B_K x (0, eps]} w f eta``.
    """
    a, eps = spec.alpha, spec.weight_cutoff
    I, _ = f_ball_integral(spec.K, spec.d)
    if a > 1:
        if eps <= 0:
            raise WindowError("the compensator diverges at eps = 0 for alpha > 1", condition="eps > 0")
        if a == 1:
            raise WindowError("alpha = 1 is not covered", condition="alpha != 1")
        return a / (a - 1.0) * eps ** (1.0 - a) * I
    if a < 1:
        return a / (1.0 - a) * eps ** (1.0 - a) * I
    raise WindowError("alpha = 1 is not covered", condition="alpha != 1")


def _small_weight_convexity(alpha: float, beta: float, eps: float) -> float:
    """``alpha int_0^eps (e^(beta w) - 1 - beta w)/beta w^(-alpha-1) dw``."""
    if beta == 0 or eps == 0:
        return 0.0

    def g(w):
        x = beta * w
        # expm1(x) - x, accurate for small x
        q = math.expm1(x) - x if x > 1e-3 else x * x / 2 + x ** 3 / 6 + x ** 4 / 24
        return q / beta * alpha * w ** (-alpha - 1)

    val, _ = integrate.quad(g, 0.0, eps, limit=200)
    return val


def _compensated_abs_bound(alpha: float, eps: float, K: float, d: int) -> float:
    """Bound on ``E|int_{B_K x (0, eps]} w f (P - eta)|``.

    Jumps ``z = w f(x) <= 1`` enter through their L2 norm, larger ones
    through twice their L1 mass, so the bound stays finite whenever
    ``f`` is in ``L^alpha`` near the origin.
    """
    def small(r):
        F = float(f_radial(r, d))
        c = min(eps, 1.0 / F)
        return alpha * c ** (2 - alpha) / (2 - alpha) * F * F * r ** (d - 1)

    def large(r):
        F = float(f_radial(r, d))
        c = 1.0 / F
        if c >= eps:
            return 0.0
        return alpha * F * (c ** (1 - alpha) - eps ** (1 - alpha)) / (alpha - 1) * r ** (d - 1)

    surface = d * unit_ball_volume(d)
    pts = [min(1e-3, K / 2), min(0.1, K / 2), min(1.0, K / 2)]
    l2, _ = integrate.quad(small, 0.0, K, points=pts, limit=400)
    l1, _ = integrate.quad(large, 0.0, K, points=pts, limit=400)
    return math.sqrt(surface * l2) + 2.0 * surface * l1


# ----------------------------------------------------------- W samples


@dataclass(frozen=True)
class PoissonPoints:
    locations: np.ndarray
    weights: np.ndarray
    K: float
    eps: float


def poisson_points(alpha: float, d: int, K: float, eps: float, seed: int, index: int = 0) -> PoissonPoints:
    """Points of intensity ``alpha w^(-alpha-1) dx dw`` on ``B_K x (eps, inf)``."""
    if not eps > 0:
        raise ValidationError("sampling needs eps > 0", condition="eps > 0")
    from .env import uniform_in_ball

    gen = rng.generator(seed, "w-points", index)
    vol = unit_ball_volume(d) * K ** d
    n = int(gen.poisson(vol * eps ** (-alpha)))
    weights = eps * (1.0 - gen.random(n)) ** (-1.0 / alpha)
    locs = uniform_in_ball(n, d, gen) * K
    return PoissonPoints(locs, weights, K, eps)


@dataclass(frozen=True)
class WSample:
    value: float
    count: int
    channels: dict = field(default_factory=dict)  # truncation error budget
    flags: tuple = ()


def _convex_part(w: np.ndarray, beta: float) -> np.ndarray:
    if beta == 0:
        return np.zeros_like(w)
    x = beta * w
    with np.errstate(over="ignore"):
        out = np.where(x > 1e-3, np.expm1(x) - x, x * x / 2 + x ** 3 / 6 + x ** 4 / 24)
    return out / beta


def w_channels(spec: CompensatedIntegralSpec) -> dict:
    """Truncation channels: small-weight fluctuation, small-weight convexity, spatial tail."""
    a, eps, K, d = spec.alpha, spec.weight_cutoff, spec.K, spec.d
    I1, _ = f_ball_integral(K, d)
    ch = {}
    if a > 1:
        # compensated points with w <= eps: zero mean, E|.| bounded below
        ch["small_weights_abs"] = _compensated_abs_bound(a, eps, K, d)
    else:
        # uncompensated: the dropped points only add mass, with this mean
        ch["small_weights_mean"] = a / (1.0 - a) * eps ** (1.0 - a) * I1
    ch["small_weights_convexity"] = _small_weight_convexity(a, spec.beta, eps) * I1
    ch["spatial_threshold"] = math.exp(-K)
    return ch


def w_value(points: PoissonPoints, spec: CompensatedIntegralSpec) -> WSample:
    """Evaluate the truncated functional on the points inside ``B_K x (eps, inf)``."""
    w_window(spec.alpha, spec.d, spec.beta)
    eps = spec.weight_cutoff
    if spec.K > points.K + 1e-12 or eps < points.eps - 1e-15:
        raise ValidationError("point set does not cover the requested cutoffs",
                              condition="K <= points.K, eps >= points.eps")
    r = np.linalg.norm(points.locations, axis=1)
    keep = (r <= spec.K) & (points.weights > eps)
    w, fx = points.weights[keep], f_radial(r[keep], spec.d)
    value = float((_convex_part(w, spec.beta) * fx).sum() + (w * fx).sum())
    if spec.alpha > 1:
        value -= compensator_integral(spec)
    # exp(beta w) overflows for beta w > ~709; the value is then genuinely huge
    flags = () if math.isfinite(value) else ("overflow",)
    return WSample(value, int(keep.sum()), w_channels(spec), flags)


def w_sample(spec: CompensatedIntegralSpec, seed: int, index: int = 0,
             outer: tuple[float, float] | None = None) -> WSample:
    """One sample of the truncated compensated integral.

    ``outer = (K_outer, eps_outer)`` draws the Poisson points on the larger
    set ``B_K_outer x (eps_outer, inf)`` and restricts them, so samples for
    different cutoffs under the same seed are coupled.
    """
    w_window(spec.alpha, spec.d, spec.beta)
    K_out, eps_out = outer if outer is not None else (spec.K, spec.weight_cutoff)
    pts = poisson_points(spec.alpha, spec.d, K_out, eps_out, seed, index)
    return w_value(pts, spec)


def w0_sample(alpha: float, d: int, seed: int, index: int = 0, K: float = 6.0,
              eps: float | None = None) -> WSample:
    return w_sample(CompensatedIntegralSpec(alpha, d, K, eps, 0.0), seed, index)


def f_shell_integral(K_in: float, K_out: float, d: int) -> float:
    """``int_{K_in < |x| <= K_out} f(x) dx``."""
    surface = d * unit_ball_volume(d)
    val, _ = integrate.quad(lambda r: f_radial(r, d) * r ** (d - 1), K_in, K_out, limit=200)
    return surface * val


def w_stability(spec: CompensatedIntegralSpec, samples: int, seed: int) -> dict:
    """Coupled K-doubling and eps-halving differences against their channels.

    Both differences are evaluated directly from the points that change
    (the ring ``K < |x| <= 2K`` and the slab ``eps/2 < w <= eps``) and the
    matching compensator pieces, so no two large sums are subtracted.
    """
    w_window(spec.alpha, spec.d, spec.beta)
    a, d, K, eps = spec.alpha, spec.d, spec.K, spec.weight_cutoff
    if a > 1:
        comp_ring = a / (a - 1.0) * eps ** (1.0 - a) * f_shell_integral(K, 2 * K, d)
        comp_slab = a / (a - 1.0) * ((eps / 2) ** (1.0 - a) - eps ** (1.0 - a)) * f_ball_integral(K, d)[0]
    else:
        comp_ring = comp_slab = 0.0
    dK, dE, counts = [], [], []
    for i in range(samples):
        pts = poisson_points(a, d, 2 * K, eps / 2, seed, i)
        r = np.linalg.norm(pts.locations, axis=1)
        w = pts.weights
        with np.errstate(over="ignore"):
            g = (_convex_part(w, spec.beta) + w) * f_radial(r, d)
        ring = (r > K) & (w > eps)
        slab = (r <= K) & (w <= eps)
        dK.append(g[ring].sum() - comp_ring)
        dE.append(g[slab].sum() - comp_slab)
        counts.append(int(((r <= K) & (w > eps)).sum()))
    ch = w_channels(spec)
    eps_channel = ch.get("small_weights_abs", ch.get("small_weights_mean", 0.0)) + ch["small_weights_convexity"]
    dK, dE = np.abs(dK), np.abs(dE)
    return dict(median_dK=float(np.median(dK)), K_channel=ch["spatial_threshold"],
                median_deps=float(np.median(dE)), eps_channel=eps_channel,
                K_ok=bool(np.median(dK) < ch["spatial_threshold"]),
                eps_ok=bool(np.median(dE) <= eps_channel), counts=np.array(counts),
                dK=dK, deps=dE)


# ------------------------------------------------------------- chi


CHI_TAIL_MULTIPLIER = 3.0


@dataclass(frozen=True)
class ChiSamples:
    values: np.ndarray
    R_cut: float
    tail_scale: float  # scale of the omitted sum over |x| > R_cut
    sites: int
    seed: int

    @property
    def tail_bound(self) -> float:
        """Per-sample truncation bound: three times the tail scale."""
        return CHI_TAIL_MULTIPLIER * self.tail_scale

    @property
    def channels(self) -> dict:
        return dict(tail_scale=self.tail_scale, tail_bound=self.tail_bound)


def _class_keys(abs_sorted: np.ndarray, base: int) -> np.ndarray:
    k = np.zeros(len(abs_sorted), np.int64)
    for c in range(abs_sorted.shape[1]):
        k = k * base + abs_sorted[:, c]
    return k


@lru_cache(maxsize=8)
def _hitting_classes(R: float, d: int) -> tuple[np.ndarray, np.ndarray]:
    """``P(x in R_inf)`` per symmetry class (sorted |coordinates|) of the ball."""
    Ri = int(math.floor(R))
    reps = []

    def rec(prefix, lo, left):
        if len(prefix) == d:
            reps.append(prefix)
            return
        for v in range(lo, Ri + 1):
            if v * v > left + 1e-9:
                break
            rec(prefix + [v], v, left - v * v)

    rec([], 0, R * R)
    reps = np.array(reps, np.int64)
    g = green_function(reps, d)
    g0 = green_function(np.zeros(d, np.int64), d)
    keys = _class_keys(reps, Ri + 1)
    order = np.argsort(keys)
    return keys[order], (np.asarray(g) / g0)[order]


@njit(cache=True)
def _chi_slice(sites, probs, keys_s, inv_alpha, mu, out, bits, off):
    S = keys_s.shape[0]
    for i in range(sites.shape[0]):
        packed = np.int64(0)
        for c in range(sites.shape[1]):
            packed = (packed << bits) | (sites[i, c] + off)
        p = probs[i]
        for s in range(S):
            u = rng.to_unit_open(rng.draw_u64(keys_s[s], np.uint64(packed)))
            out[s] += (u ** (-inv_alpha) - mu) * p


def _ball_slices(R: float, d: int):
    """Yield the ball's sites one first-coordinate slice at a time."""
    from .env import ball_sites

    Ri = int(math.floor(R))
    for x0 in range(-Ri, Ri + 1):
        rest = R * R - x0 * x0
        if rest < -1e-9:
            continue
        sub = ball_sites(math.sqrt(max(rest, 0.0)), d - 1)
        yield np.concatenate([np.full((len(sub), 1), x0, np.int64), sub], axis=1)


def chi_tail_scale(alpha: float, d: int, R: float) -> float:
    """Scale of ``sum_{|x| > R} (omega_x - mu) P(x in R_inf)``.

    With ``P(x in R_inf) ~ c |x|^(2-d)``, ``c = a_d / G(0)`` and
    ``a_d = Gamma(d/2 - 1) d / (2 pi^(d/2))``, the omitted sum has scale
    ``(sum p_x^a)^(1/a)``, ``a = min(alpha, 2)``, bounded by the radial integral
    (times the standard deviation of omega when alpha > 2).
    """
    a = min(alpha, 2.0)
    g0 = float(green_function(np.zeros(d, np.int64), d))
    c = math.gamma(d / 2 - 1) * d / (2 * math.pi ** (d / 2)) / g0
    surface = d * unit_ball_volume(d)
    expo = (d - 2) * a - d
    if expo <= 0:
        return math.inf
    scale = c * (surface * R ** (-expo) / expo) ** (1.0 / a)
    return scale * math.sqrt(pareto_variance(alpha)) if alpha > 2 else scale


def chi_estimate(alpha: float, d: int, mu: float | None = None, R_cut: float = 10.0,
                 samples: int = 1000, seed: int = 0) -> ChiSamples:
    """I.i.d. samples of ``sum_{|x| <= R_cut} (omega_x - mu) P(x in R_inf)``.

    Sample ``s`` draws ``omega_x`` from a counter stream keyed by the packed
    site, so the sums for different ``R_cut`` under one seed are nested.
    """
    chi_window(alpha, d)
    if R_cut < 10:
        raise ValidationError("R_cut must be >= 10", condition="R_cut >= 10")
    if samples < 1:
        raise ValidationError("samples must be >= 1", condition="samples >= 1")
    mu = pareto_mean(alpha) if mu is None else mu
    keys, probs = _hitting_classes(float(R_cut), d)
    base = int(math.floor(R_cut)) + 1
    bits, off = packing(d)
    root = np.uint64(rng.label_seed(seed, "chi"))
    sample_keys = np.array([rng.stream_key(root, np.uint64(s)) for s in range(samples)], np.uint64)
    out = np.zeros(samples)
    n_sites = 0
    for sl in _ball_slices(float(R_cut), d):
        cls = _class_keys(np.sort(np.abs(sl), axis=1), base)
        p = probs[np.searchsorted(keys, cls)]
        _chi_slice(np.ascontiguousarray(sl), p, sample_keys, 1.0 / alpha, float(mu), out, bits, off)
        n_sites += len(sl)
    return ChiSamples(out, float(R_cut), chi_tail_scale(alpha, d, R_cut), n_sites, seed)
