"""Heavy-tail environments: lattice fields, Poisson weight fields, truncation.

The lattice law is the pure Pareto law ``P(omega > t) = t**-alpha`` on
``[1, inf)``. Site values are a deterministic function of ``(seed, site)``
so a lattice field is never materialised beyond what a caller asks for.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import rng
from .errors import NumericalDiagnostic, ValidationError

DENSE_RADIUS_MAX = 64
GRID_CELLS_MAX = 1 << 24


def pareto_from_uniform(u, alpha: float):
    """Inverse transform ``u**(-1/alpha)`` for ``u`` in (0, 1]."""
    return np.power(u, -1.0 / alpha)


def sample_pareto(alpha: float, n: int, seed: int) -> np.ndarray:
    if not alpha > 0:
        raise ValidationError("alpha must be > 0", condition="alpha > 0")
    if n < 1:
        raise ValidationError("n must be >= 1", condition="n >= 1")
    u = 1.0 - rng.generator(seed, "pareto").random(n)  # (0, 1]
    return pareto_from_uniform(u, alpha)


def pareto_mean(alpha: float) -> float:
    if alpha <= 1:
        raise ValidationError("mean requires alpha > 1", condition="alpha > 1")
    return alpha / (alpha - 1.0)


def pareto_variance(alpha: float) -> float:
    if alpha <= 2:
        raise ValidationError("variance requires alpha > 2", condition="alpha > 2")
    return alpha / (alpha - 2.0) - pareto_mean(alpha) ** 2


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def ball_sites(r: float, d: int) -> np.ndarray:
    """Integer points with Euclidean norm <= r, in lexicographic order."""
    R = int(math.floor(r))
    r2 = r * r
    axis = np.arange(-R, R + 1, dtype=np.int64)
    pts = axis[:, None]
    for _ in range(1, d):
        n = pts.shape[0]
        pts = np.concatenate([np.repeat(pts, axis.size, axis=0),
                              np.tile(axis, n)[:, None]], axis=1)
        keep = (pts.astype(np.float64) ** 2).sum(axis=1) <= r2 + 1e-9
        pts = pts[keep]
    keep = (pts.astype(np.float64) ** 2).sum(axis=1) <= r2 + 1e-9
    return pts[keep]


@dataclass(frozen=True)
class LatticeEnvironment:
    """I.i.d. Pareto field on Z^d, generated lazily from ``(seed, site)``.

    ``overrides`` pins explicit values at chosen sites (hand-built fields);
    ``shift`` adds a constant to every value.
    """

    d: int
    alpha: float
    seed: int
    radius: float = DENSE_RADIUS_MAX
    shift: float = 0.0
    overrides: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError("alpha must be > 0", condition="alpha > 0")

    @classmethod
    def from_values(cls, values: dict, d: int, alpha: float = 1.5, seed: int = 0,
                    radius: float | None = None) -> "LatticeEnvironment":
        over = {tuple(int(c) for c in k): float(v) for k, v in values.items()}
        if radius is None:
            radius = max((math.sqrt(sum(c * c for c in k)) for k in over), default=0.0)
        return cls(d=d, alpha=alpha, seed=seed, radius=radius, overrides=over)

    def shifted(self, c: float) -> "LatticeEnvironment":
        return LatticeEnvironment(self.d, self.alpha, self.seed, self.radius,
                                  self.shift + c, dict(self.overrides))

    def with_radius(self, r: float) -> "LatticeEnvironment":
        return LatticeEnvironment(self.d, self.alpha, self.seed, r, self.shift,
                                  dict(self.overrides))

    @property
    def is_dense(self) -> bool:
        return self.radius <= DENSE_RADIUS_MAX

    def values_at(self, sites) -> np.ndarray:
        sites = np.ascontiguousarray(np.atleast_2d(sites), dtype=np.int64)
        vals = pareto_from_uniform(rng.site_uniforms(np.uint64(self.seed), sites), self.alpha)
        if self.overrides:
            for i, s in enumerate(map(tuple, sites)):
                if s in self.overrides:
                    vals[i] = self.overrides[s]
        return vals + self.shift

    def ball(self) -> tuple[np.ndarray, np.ndarray]:
        """Sites of the Euclidean ball of radius ``self.radius`` and their values."""
        if not self.is_dense:
            raise ValidationError(
                f"radius {self.radius} > {DENSE_RADIUS_MAX}: ball is kept sparse, "
                "query values_at() for the sites you need", condition="dense radius")
        sites = ball_sites(self.radius, self.d)
        return sites, self.values_at(sites)

    def grid(self, half_width: int) -> np.ndarray:
        """Dense values on the box ``[-half_width, half_width]^d`` (C order)."""
        side = 2 * half_width + 1
        if side ** self.d > GRID_CELLS_MAX:
            raise ValidationError("grid too large", condition="grid cells <= 2^24")
        axis = np.arange(-half_width, half_width + 1, dtype=np.int64)
        mesh = np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1)
        sites = mesh.reshape(-1, self.d)
        return self.values_at(sites).reshape((side,) * self.d)

    def save(self, path) -> None:
        """Columnar snapshot of the ball: one row per site, then the value."""
        sites, vals = self.ball()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.d)] + ["value"])
            for s, v in zip(sites, vals):
                w.writerow([*map(int, s), repr(float(v))])

    @classmethod
    def load(cls, path, alpha: float, seed: int = 0) -> "LatticeEnvironment":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        d = len(rows[0]) - 1
        values = {tuple(int(c) for c in r[:d]): float(r[d]) for r in rows[1:]}
        return cls.from_values(values, d=d, alpha=alpha, seed=seed)


@dataclass(frozen=True)
class OrderStatistics:
    """Weights in decreasing order with their locations."""

    weights: np.ndarray
    sites: np.ndarray
    domain_radius: float
    kind: str  # "discrete" | "continuum"

    def __len__(self) -> int:
        return len(self.weights)

    def top(self, ell: int) -> "OrderStatistics":
        return OrderStatistics(self.weights[:ell], self.sites[:ell], self.domain_radius, self.kind)

    def beyond(self, ell: int) -> "OrderStatistics":
        return OrderStatistics(self.weights[ell:], self.sites[ell:], self.domain_radius, self.kind)

    def scaled(self, space: float, weight: float) -> "OrderStatistics":
        return OrderStatistics(self.weights * weight, self.sites * space,
                               self.domain_radius * space, self.kind)


def order_statistics(values: np.ndarray, sites: np.ndarray, radius: float,
                     kind: str = "discrete") -> OrderStatistics:
    sites = np.asarray(sites)
    values = np.asarray(values, dtype=np.float64)
    keys = tuple(sites[:, j] for j in range(sites.shape[1] - 1, -1, -1)) + (-values,)
    idx = np.lexsort(keys)
    return OrderStatistics(values[idx], sites[idx], float(radius), kind)


def order_statistics_discrete(env: LatticeEnvironment) -> OrderStatistics:
    sites, vals = env.ball()
    return order_statistics(vals, sites, env.radius, "discrete")


def uniform_in_ball(n: int, d: int, gen: np.random.Generator) -> np.ndarray:
    g = gen.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * gen.random(n)[:, None] ** (1.0 / d)


class PoissonField:
    """Poisson process of intensity ``alpha w^(-alpha-1) dx dw`` on a ball.

    Points are produced in decreasing weight order from two independent
    streams (exponential spacings and unit-ball locations), so the ``i``-th
    point is the same regardless of how many points are requested; fields
    built from the same seed at different radii share their randomness.
    """

    _CHUNK = 256

    def __init__(self, alpha: float, d: int, radius: float, seed: int):
        if alpha <= 0 or radius <= 0:
            raise ValidationError("need alpha > 0 and radius > 0", condition="alpha, q > 0")
        self.alpha, self.d, self.radius, self.seed = float(alpha), int(d), float(radius), seed
        self._wgen = rng.generator(seed, "poisson-weights")
        self._ygen = rng.generator(seed, "poisson-locations")
        self._gammas = np.empty(0)
        self._unit = np.empty((0, self.d))

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.d) * self.radius ** self.d

    def _extend(self, n: int) -> None:
        while len(self._gammas) < n:
            e = self._wgen.standard_exponential(self._CHUNK)
            last = self._gammas[-1] if len(self._gammas) else 0.0
            self._gammas = np.concatenate([self._gammas, last + np.cumsum(e)])
            self._unit = np.concatenate([self._unit, uniform_in_ball(self._CHUNK, self.d, self._ygen)])

    def points(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        self._extend(n)
        w = (self.volume / self._gammas[:n]) ** (1.0 / self.alpha)
        return w, self._unit[:n] * self.radius

    def top(self, ell: int, q: float | None = None) -> OrderStatistics:
        """Top ``ell`` points inside the sub-ball of radius ``q`` (default: all)."""
        if ell < 1:
            raise ValidationError("ell must be >= 1", condition="ell >= 1")
        if q is None or q >= self.radius:
            w, y = self.points(ell)
            return OrderStatistics(w, y, self.radius, "continuum")
        if q <= 0:
            raise ValidationError("q must be > 0", condition="q > 0")
        n = max(ell, int(2 * ell * (self.radius / q) ** self.d))
        while True:
            w, y = self.points(n)
            inside = np.flatnonzero(np.linalg.norm(y, axis=1) <= q)
            if len(inside) >= ell:
                k = inside[:ell]
                return OrderStatistics(w[k], y[k], q, "continuum")
            n *= 2

    def count_above(self, threshold: float) -> int:
        n = self._CHUNK
        while True:
            w, _ = self.points(n)
            if w[-1] <= threshold:
                return int(np.searchsorted(-w, -threshold, side="left"))
            n *= 2


def poisson_weights(gammas, volume: float, alpha: float):
    return (volume / np.asarray(gammas)) ** (1.0 / alpha)


def sample_poisson_field(q: float, alpha: float, ell: int, d: int, seed: int) -> OrderStatistics:
    """Top-``ell`` order statistics of the continuum field on the ball of radius ``q``."""
    if ell < 1:
        raise ValidationError("ell must be >= 1", condition="ell >= 1")
    return PoissonField(alpha, d, q, seed).top(ell)


def k_level(N: float, alpha: float, d: int, eta: float) -> float:
    """Truncation level: ``(log N)^eta N^{d/2alpha}`` (d >= 3), log log N for d = 2."""
    base = math.log(math.log(N)) if d == 2 else math.log(N)
    return base ** eta * N ** (d / (2.0 * alpha))


@dataclass(frozen=True)
class TruncatedEnvironment:
    base: LatticeEnvironment
    level: float
    mu: float

    def values_at(self, sites) -> np.ndarray:
        w = self.base.values_at(sites)
        return np.where(w <= self.level, w - self.mu, 0.0)


def truncate_environment(env: LatticeEnvironment, N: float, eta: float,
                         mu_or_h: float | None = None) -> TruncatedEnvironment:
    lo = env.d / (2.0 * env.alpha)
    if not (lo < eta < 1.0):
        raise ValidationError(f"eta={eta} outside ({lo:.6g}, 1)", condition="d/(2 alpha) < eta < 1")
    if N < 3:
        raise ValidationError("N must be >= 3", condition="N >= 3")
    mu = mu_or_h if mu_or_h is not None else pareto_mean(env.alpha)
    return TruncatedEnvironment(env, k_level(N, env.alpha, env.d, eta), float(mu))


def central_moment(alpha: float, i: int, mu: float | None = None) -> float:
    """``E[(omega - mu)^i]`` for the Pareto law (requires ``i < alpha``)."""
    if i >= alpha:
        raise ValidationError("moment of order >= alpha diverges", condition="i < alpha")
    if mu is None:
        mu = pareto_mean(alpha) if alpha > 1 else 0.0
    return sum(math.comb(i, j) * (alpha / (alpha - j)) * (-mu) ** (i - j) for j in range(i + 1))


@dataclass(frozen=True)
class MgfResult:
    lambda_N: float
    bound: float
    remainder: float
    case: str
    abserr: float


def _mgf_minus_one(alpha: float, beta: float, k: float, mu: float) -> tuple[float, float]:
    if k <= 1.0 or beta == 0.0:
        return 0.0, 0.0
    f = lambda s: math.expm1(beta * (math.exp(s) - mu)) * alpha * math.exp(-alpha * s)
    top = math.log(k)
    brk = [x for x in (math.log(mu) if mu > 1 else None, math.log(1.0 / beta) if beta < 1 else None)
           if x is not None and 0 < x < top]
    with warnings.catch_warnings():
        # the achieved tolerance is returned to the caller instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, 0.0, top, points=brk or None, limit=400,
                                  epsabs=0.0, epsrel=1e-12)
    return val, err


def mgf_bound_shape(alpha: float, beta: float, k: float, p: int) -> tuple[float, str]:
    """Shape of the remainder bound (constant omitted) and which case applies."""
    bk = beta * k
    lk = math.log(k) if k > 1 else 0.0
    if bk >= 1.0:
        if p + 1 > alpha:
            return math.exp(bk) * beta ** alpha, "bk>=1,p+1>alpha"
        if p + 1 == alpha:
            return math.exp(bk) * beta ** alpha * lk, "bk>=1,p+1=alpha"
        return math.exp(bk) * beta ** (p + 1), "bk>=1,p+1<alpha"
    if alpha < p + 1:
        return beta * k ** (1.0 - alpha), "bk<1,alpha<p+1"
    if alpha == p + 1:
        return beta * k ** (1.0 - alpha) * lk, "bk<1,alpha=p+1"
    # small beta k with alpha > p+1: the general two-term estimate
    tail = k ** -(p + 1)
    return math.expm1(bk) * k ** -alpha + math.exp(bk) * bk ** (p + 1) * tail, "bk<1,general"


def truncated_log_mgf(alpha: float, beta_N: float, k_N: float, p: int,
                      mu: float | None = None, C: float = 1.0) -> MgfResult:
    """log E[exp(beta_N * omega_tilde)] by quadrature, with the remainder bound.

    The remainder is the gap between E[exp(beta_N omega_tilde)] and its
    order-``p`` Taylor polynomial built from untruncated centred moments.
    """
    if int(p) != p or p < 0 or p >= alpha:
        raise ValidationError("need integer 0 <= p < alpha", condition="0 <= p < alpha")
    if beta_N < 0 or k_N <= 0:
        raise ValidationError("need beta_N >= 0, k_N > 0", condition="beta_N >= 0, k_N > 0")
    if mu is None:
        mu = pareto_mean(alpha) if alpha > 1 else 0.0
    if beta_N == 0.0:
        return MgfResult(0.0, 0.0, 0.0, "beta=0", 0.0)
    m1, err = _mgf_minus_one(alpha, beta_N, k_N, mu)
    if not math.isfinite(m1):
        raise NumericalDiagnostic(f"quadrature failed (abserr={err})")
    taylor = sum(beta_N ** i / math.factorial(i) * central_moment(alpha, i, mu)
                 for i in range(1, p + 1))
    shape, case = mgf_bound_shape(alpha, beta_N, k_N, p)
    return MgfResult(math.log1p(m1), C * shape, abs(m1 - taylor), case, err)
