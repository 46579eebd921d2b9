"""Model parameters, phase-diagram regions and the wandering exponent."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ValidationError

_REL_TOL = 1e-12


class Region(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    BOUNDARY_AB = "boundary_AB"
    BOUNDARY_BC = "boundary_BC"


@dataclass(frozen=True)
class ModelParams:
    """Dimension, tail exponent, coupling decay, amplitude and field.

    ``beta_hat`` may be ``math.inf``. The environment law is the pure Pareto
    law on ``[1, inf)``, so the mean ``mu`` exists exactly when ``alpha > 1``.
    """

    d: int
    alpha: float
    gamma: float
    beta_hat: float = 1.0
    h: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValidationError("d must be an integer >= 2", condition="d >= 2")
        if not (0.0 < self.alpha < self.d):
            raise ValidationError(
                f"alpha={self.alpha} outside (0, d={self.d})", condition="0 < alpha < d"
            )
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0", condition="gamma >= 0")
        if not self.beta_hat > 0:
            raise ValidationError("beta_hat must be > 0 (or inf)", condition="beta_hat > 0")

    @property
    def mu(self) -> float | None:
        if self.alpha > 1:
            return self.alpha / (self.alpha - 1.0)
        return None

    @property
    def region(self) -> Region:
        return classify_regime(self)

    @property
    def xi(self) -> float:
        return wandering_exponent(self)


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_REL_TOL, abs_tol=_REL_TOL)


def region_boundaries(alpha: float, d: int) -> tuple[float, float]:
    """Return ``((d - alpha)/alpha, d/(2 alpha))``."""
    return (d - alpha) / alpha, d / (2.0 * alpha)


def classify_regime(p: ModelParams) -> Region:
    if p.alpha >= p.d:
        raise ValidationError("alpha >= d is not supported", condition="alpha < d")
    lo, hi = region_boundaries(p.alpha, p.d)
    g = p.gamma
    if _close(g, lo):
        # at alpha = d/2 both lines coincide
        return Region.BOUNDARY_AB
    if g < lo:
        return Region.A
    if p.alpha > p.d / 2.0:
        if _close(g, hi):
            return Region.BOUNDARY_BC
        if g < hi:
            return Region.B
    return Region.C


def wandering_exponent(p: ModelParams) -> float:
    region = classify_regime(p)
    if region in (Region.A, Region.BOUNDARY_AB):
        return 1.0
    if region in (Region.C, Region.BOUNDARY_BC):
        return 0.5
    return p.alpha * (1.0 - p.gamma) / (2.0 * p.alpha - p.d)


def coupling(p: ModelParams, N: int) -> float:
    """``beta_hat * N**(-gamma)``, evaluated in log space."""
    if N < 1:
        raise ValidationError("N must be >= 1", condition="N >= 1")
    if math.isinf(p.beta_hat):
        return math.inf
    if p.gamma == 0:
        return float(p.beta_hat)
    return math.exp(math.log(p.beta_hat) - p.gamma * math.log(N))
