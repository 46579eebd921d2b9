"""Entropy-controlled last-passage percolation.

Because ``Ent(delta) = (d/2) L^2`` with ``L`` the origin-anchored path
length, the largest collectable subset under an entropy budget ``B`` is the
largest subset visitable by a path of length at most ``sqrt(2B/d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _dp, rng
from .entropy import ent
from .env import ball_sites, uniform_in_ball, unit_ball_volume
from .errors import ValidationError
from .stats import MCEstimate, wilson_interval

_REL = 1e-12


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (m, d)
    kind: str  # "continuum" | "lattice"
    radius: float

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ElppResult:
    k_max: int
    witness: np.ndarray  # ordered points, (k_max, d)
    entropy_used: float
    exact: bool


def sample_cloud(m: int, r: float, d: int, kind: str, seed: int, index: int = 0) -> PointCloud:
    """``m`` i.i.d. uniform points of the ball, or ``m`` distinct uniform lattice sites."""
    gen = rng.generator(seed, f"elpp-{kind}", index)
    if kind == "continuum":
        return PointCloud(uniform_in_ball(m, d, gen) * r, kind, float(r))
    if kind != "lattice":
        raise ValidationError(f"unknown cloud kind {kind!r}", condition="kind in {continuum, lattice}")
    sites = _lattice_ball(float(r), d)
    if m > len(sites):
        raise ValidationError("more points than lattice sites", condition="m <= |ball|")
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < m:  # rejection of repeats keeps the draw uniform
        i = int(gen.integers(len(sites)))
        if i not in seen:
            seen.add(i)
            chosen.append(i)
    return PointCloud(sites[chosen].astype(np.float64), kind, float(r))


_BALLS: dict = {}


def _lattice_ball(r: float, d: int) -> np.ndarray:
    if (r, d) not in _BALLS:
        _BALLS[(r, d)] = ball_sites(r, d)
    return _BALLS[(r, d)]


def length_budget(B: float, d: int) -> float:
    return math.sqrt(2.0 * B / d)


def elpp_exact(cloud: PointCloud, B: float, d: int | None = None) -> ElppResult:
    """Maximal cardinality of an ordered subset with entropy at most ``B``.

    Points farther than the length budget are dropped before the subset DP.
    Among maximal subsets the shortest wins, then the smallest index set.
    """
    d = cloud.d if d is None else d
    _dp.check_size(cloud.m)
    if B < 0:
        raise ValidationError("B must be >= 0", condition="B >= 0")
    rho = length_budget(B, d)
    pts = cloud.points
    keep = np.flatnonzero(np.linalg.norm(pts, axis=1) <= rho * (1 + _REL))
    if len(keep) == 0:
        return ElppResult(0, np.zeros((0, cloud.d)), 0.0, True)
    dp, best, d0, dist = _dp.subset_lengths(pts[keep])
    sizes = _dp.popcounts(len(keep))
    ok = 0.5 * d * best * best <= B
    k_max = int(sizes[ok].max())
    cands = np.flatnonzero(ok & (sizes == k_max))
    # smallest index set in the original numbering, after the shortest length
    orig_mask = [sum(1 << int(keep[j]) for j in range(len(keep)) if (c >> j) & 1) for c in cands]
    pick = min(range(len(cands)), key=lambda i: (best[cands[i]], orig_mask[i]))
    order = _dp.best_order(dp, d0, dist, int(cands[pick]))
    witness = pts[keep[order]]
    used = ent(witness, d)
    if used > B * (1 + 1e-12) + 1e-12:
        raise AssertionError("witness exceeds the entropy budget")
    return ElppResult(k_max, witness, used, True)


def elpp_greedy(cloud: PointCloud, B: float, d: int | None = None) -> ElppResult:
    """Nearest-neighbour walk under the length budget (a lower bound on k_max)."""
    d = cloud.d if d is None else d
    rho = length_budget(B, d)
    order, _ = _dp.nearest_neighbour_order(cloud.points, budget=rho * (1 + _REL))
    witness = cloud.points[order]
    used = ent(witness, d) if order else 0.0
    if used > B:
        witness, used = witness[:-1], ent(witness[:-1], d) if len(witness) > 1 else 0.0
    return ElppResult(len(witness), witness, used, False)


def tail_bound(c_d: float, B: float, m: int, r: float, k: int, d: int) -> float:
    """``(c_d B^(1/2) m^(1/d) / (r k))^(d k)``."""
    return (c_d * math.sqrt(B) * m ** (1.0 / d) / (r * k)) ** (d * k)


def constant_needed(p: float, B: float, m: int, r: float, k: int, d: int) -> float:
    """Smallest ``c_d`` for which :func:`tail_bound` is at least ``p``."""
    if p <= 0:
        return 0.0
    return r * k * p ** (1.0 / (d * k)) / (math.sqrt(B) * m ** (1.0 / d))


def elpp_samples(m: int, r: float, B: float, d: int, replicas: int, seed: int,
                 kind: str = "continuum") -> np.ndarray:
    return np.array([elpp_exact(sample_cloud(m, r, d, kind, seed, i), B, d).k_max
                     for i in range(replicas)])


def elpp_tail_experiment(m: int, r: float, B: float, d: int, k_grid, replicas: int,
                         seed: int, kind: str = "continuum", c_d: float | None = None,
                         z: float = 1.96) -> list[dict]:
    """Empirical ``P(L > k)`` with Wilson intervals, next to the tail bound.

    Without ``c_d`` the rows carry the constant each entry would need
    (from the Wilson upper limit at ``z``), which is how a pilot run calibrates it.
    """
    L = elpp_samples(m, r, B, d, replicas, seed, kind)
    rows = []
    for k in k_grid:
        hits = int((L > k).sum())
        lo, hi = wilson_interval(hits, replicas, z)
        row = dict(kind=kind, m=m, r=r, B=B, d=d, k=int(k), replicas=replicas, seed=seed,
                   hits=hits, p=hits / replicas, wilson_lo=lo, wilson_hi=hi,
                   c_needed=constant_needed(hi, B, m, r, int(k), d), zero_hit=hits == 0)
        if c_d is not None:
            row["bound"] = tail_bound(c_d, B, m, r, int(k), d)
            row["holds"] = row["p"] <= row["bound"]
        rows.append(row)
    return rows


def moment_ratio(L: np.ndarray, B: float, m: int, r: float, d: int, b: float) -> float:
    """Empirical ``E[(L / min(B^(1/2) m^(1/d) / r, m))^b]``."""
    scale = min(math.sqrt(B) * m ** (1.0 / d) / r, m)
    return float(np.mean((L / scale) ** b))


# ------------------------------------------------------------ volumes


@dataclass(frozen=True)
class VolumeEstimate:
    mc: MCEstimate
    geometric: float
    printed_formula: float

    @property
    def ratio_printed_to_geometric(self) -> float:
        return self.printed_formula / self.geometric


def entropy_ball_volume_geometric(k: int, B: float, d: int) -> float:
    """Volume of ``{(x_1..x_k): Ent <= B}``: increments ``y_i`` with ``sum |y_i| <= rho``.

    Radial integration gives ``(d V_d)^k Gamma(d)^k rho^(dk) / Gamma(dk + 1)``.
    """
    rho = length_budget(B, d)
    logv = k * (math.log(d * unit_ball_volume(d)) + special.gammaln(d)) + d * k * math.log(rho) \
        - special.gammaln(d * k + 1)
    return math.exp(logv)


def entropy_ball_volume_printed(k: int, B: float, d: int) -> float:
    """``(pi^(d/2)/Gamma(d/2+1))^k Gamma(d)^k / Gamma(dk+1) B^(dk/2)`` as printed."""
    logv = k * (math.log(unit_ball_volume(d)) + special.gammaln(d)) - special.gammaln(d * k + 1) \
        + 0.5 * d * k * math.log(B)
    return math.exp(logv)


def entropy_ball_volume(k: int, B: float, d: int, replicas: int, seed: int) -> VolumeEstimate:
    """Hit-or-miss volume of the entropy ball.

    Increments are drawn uniformly from a product of balls of radius rho
    (a tighter envelope than a box, same volume element), and the fraction
    with total length at most rho is scaled by the envelope volume.
    """
    if k < 1 or k > 6 or d > 4:
        raise ValidationError("volume MC supports k <= 6, d <= 4", condition="k <= 6, d <= 4")
    rho = length_budget(B, d)
    gen = rng.generator(seed, "entropy-volume")
    radii = rho * gen.random((replicas, k)) ** (1.0 / d)
    inside = (radii.sum(axis=1) <= rho).astype(np.float64)
    envelope = (unit_ball_volume(d) * rho ** d) ** k
    p = inside.mean()
    flags = ("zero-hit",) if p == 0 else ()
    mc = MCEstimate(p * envelope, envelope * math.sqrt(p * (1 - p) / replicas), replicas, seed, flags)
    return VolumeEstimate(mc, entropy_ball_volume_geometric(k, B, d), entropy_ball_volume_printed(k, B, d))
