from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from ndpolymer import limits
from ndpolymer.env import unit_ball_volume
from ndpolymer.errors import ValidationError, WindowError


def d2_ball_integral(K: float) -> float:
    """Closed form of the d=2 profile integral over a disc of radius K."""
    a = K * K / 2
    return 2 * math.pi * (a * special.exp1(a) + 1 - math.exp(-a))


# ------------------------------------------------------------ windows


def test_chi_window_rejects_and_accepts():
    with pytest.raises(WindowError) as err:
        limits.chi_estimate(1.6, 5, samples=1)
    assert err.value.condition == "alpha > d/(d-2)"
    with pytest.raises(WindowError):
        limits.chi_window(3.0, 4)
    limits.chi_window(2.2, 5)
    limits.chi_window(1.5, 8)


def test_w_window_cases():
    with pytest.raises(WindowError) as err:
        limits.w_sample(limits.CompensatedIntegralSpec(1.9, 5, 6.0, None, 0.5), 0)
    assert err.value.condition == "d in {2,3}"
    with pytest.raises(WindowError):
        limits.w_window(1.4, 3, 0.5)  # alpha below d/2
    with pytest.raises(WindowError):
        limits.w_window(1.0, 2, 0.0)
    with pytest.raises(WindowError):
        limits.w_window(1.7, 5, 0.0)  # beyond d/(d-2)
    limits.w_window(1.6, 3, 0.0)
    limits.w_window(0.5, 7, 0.0)
    limits.w_window(1.6, 3, 0.3)


def test_spec_validation():
    with pytest.raises(ValidationError):
        limits.CompensatedIntegralSpec(1.5, 2, K=0.0)
    with pytest.raises(ValidationError):
        limits.CompensatedIntegralSpec(1.5, 2, eps=-1.0)
    with pytest.raises(ValidationError):
        limits.CompensatedIntegralSpec(1.5, 2, beta=-0.1)


def test_chi_rejects_small_cutoff():
    with pytest.raises(ValidationError):
        limits.chi_estimate(2.2, 5, R_cut=8.0, samples=1)


# ------------------------------------------------------- profile integral


@pytest.mark.parametrize("K", [0.3, 1.0, 2.5, 6.0])
def test_d2_ball_integral_closed_form(K):
    val, _ = limits.f_ball_integral(K, 2)
    assert val == pytest.approx(d2_ball_integral(K), rel=1e-9)


def test_d2_ball_integral_increasing_concave():
    # the second K-derivative has the sign of E1(a) - 2 exp(-a), a = K^2/2,
    # so concavity in K starts at a ~ 0.1019; in the area K^2 it holds throughout
    small = np.linspace(0.01, 0.4, 20)
    large = np.linspace(0.5, 8.0, 40)
    area = np.sqrt(np.linspace(0.01, 36.0, 60))
    for Ks, concave in ((small, False), (large, True), (area, True)):
        vals = np.array([limits.f_ball_integral(float(K), 2)[0] for K in Ks])
        assert np.all(np.diff(vals) > 0)
        assert np.all(np.diff(vals, 2) < 0) == concave


@pytest.mark.parametrize("d", [2, 3, 5])
def test_ball_integral_against_mc(d):
    val, _ = limits.f_ball_integral(2.0, d)
    mc, se = limits.f_ball_integral_mc(2.0, d, 200_000, 11)
    assert abs(mc - val) < 3 * se


def test_shell_integral_adds_up():
    inner, _ = limits.f_ball_integral(1.5, 3)
    outer, _ = limits.f_ball_integral(3.0, 3)
    assert limits.f_shell_integral(1.5, 3.0, 3) == pytest.approx(outer - inner, rel=1e-8)


# ------------------------------------------------------------ compensator


def test_compensator_alpha_two_unit_cutoff():
    spec = limits.CompensatedIntegralSpec(2.0, 3, 4.0, 1.0)
    I, _ = limits.f_ball_integral(4.0, 3)
    assert limits.compensator_integral(spec) == pytest.approx(2 * I, rel=1e-12)


def test_compensator_light_tail_is_dropped_mass():
    alpha, eps, K = 0.5, 0.2, 3.0
    spec = limits.CompensatedIntegralSpec(alpha, 2, K, eps)
    I, _ = limits.f_ball_integral(K, 2)
    mass, _ = integrate.quad(lambda w: w * alpha * w ** (-alpha - 1), 0, eps)
    assert limits.compensator_integral(spec) == pytest.approx(mass * I, rel=1e-8)


def test_compensator_needs_positive_cutoff():
    with pytest.raises(WindowError):
        limits.compensator_integral(limits.CompensatedIntegralSpec(1.5, 2, 3.0, 0.0))


def test_default_eps_formula():
    vol = unit_ball_volume(3) * 6.0 ** 3
    assert limits.default_eps(1.6, 3, 6.0) == pytest.approx(1e-2 * (vol / math.log(2)) ** (1 / 1.6))


# ------------------------------------------------------------ W samples


def test_poisson_count_law():
    alpha, d, K = 0.5, 2, 3.0
    eps = limits.default_eps(alpha, d, K)
    mean = 10 ** (2 * alpha) * math.log(2)
    counts = np.array([len(limits.poisson_points(alpha, d, K, eps, 5, i).weights) for i in range(4000)])
    top = 20
    observed = np.bincount(np.minimum(counts, top), minlength=top + 1)
    probs = stats.poisson.pmf(np.arange(top), mean)
    probs = np.append(probs, 1 - probs.sum())
    expected = probs * len(counts)
    # merge sparse cells on the right
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    _, pval = stats.chisquare(obs, exp)
    assert pval > 1e-3


def test_poisson_points_need_positive_eps():
    with pytest.raises(ValidationError):
        limits.poisson_points(0.5, 2, 3.0, 0.0, 1)


def test_beta_zero_continuity():
    K = 6.0
    gaps = []
    for i in range(200):
        small = limits.w_sample(limits.CompensatedIntegralSpec(1.6, 3, K, None, 1e-3), 21, i)
        zero = limits.w_sample(limits.CompensatedIntegralSpec(1.6, 3, K, None, 0.0), 21, i)
        if math.isfinite(small.value):
            gaps.append(abs(small.value - zero.value))
    assert np.median(gaps) < 1e-2


@pytest.mark.parametrize("alpha,d,beta", [(1.6, 2, 0.0), (0.5, 2, 0.0), (1.5, 2, 0.5)])
def test_cutoff_stability(alpha, d, beta):
    res = limits.w_stability(limits.CompensatedIntegralSpec(alpha, d, 6.0, None, beta), 200, 9)
    assert res["K_ok"]
    assert res["eps_ok"]


def test_coupled_restriction_matches_direct():
    spec = limits.CompensatedIntegralSpec(1.6, 2, 3.0, 0.5)
    direct = limits.w_sample(spec, 4, 2)
    pts = limits.poisson_points(1.6, 2, 3.0, 0.5, 4, 2)
    assert limits.w_value(pts, spec).value == direct.value
    with pytest.raises(ValidationError):
        limits.w_value(pts, limits.CompensatedIntegralSpec(1.6, 2, 4.0, 0.5))


def test_w_sample_carries_channels():
    s = limits.w_sample(limits.CompensatedIntegralSpec(1.6, 3, 6.0), 3)
    assert set(s.channels) == {"small_weights_abs", "small_weights_convexity", "spatial_threshold"}
    s = limits.w0_sample(0.5, 2, 3)
    assert "small_weights_mean" in s.channels


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 50))
def test_w_non_decreasing_in_beta(b1, b2, index):
    lo, hi = sorted((b1, b2))
    a = limits.w_sample(limits.CompensatedIntegralSpec(1.6, 2, 3.0, None, lo), 8, index)
    b = limits.w_sample(limits.CompensatedIntegralSpec(1.6, 2, 3.0, None, hi), 8, index)
    assert b.value >= a.value - 1e-9 * max(1.0, abs(a.value))


# ------------------------------------------------------------------ chi


def test_chi_channels():
    c = limits.chi_estimate(2.2, 5, samples=4, seed=2)
    assert c.tail_bound == pytest.approx(3 * c.tail_scale)
    assert set(c.channels) == {"tail_scale", "tail_bound"}
    assert c.sites == sum(1 for x in np.ndindex(*(21,) * 5)
                          if sum((v - 10) ** 2 for v in x) <= 100)


def test_chi_deterministic():
    a = limits.chi_estimate(2.2, 5, samples=5, seed=3)
    b = limits.chi_estimate(2.2, 5, samples=5, seed=3)
    np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.slow
def test_chi_centred():
    c = limits.chi_estimate(2.2, 5, samples=10_000, seed=6)
    se = c.values.std(ddof=1) / math.sqrt(len(c.values))
    assert abs(c.values.mean()) < 3 * se


@pytest.mark.slow
def test_chi_cutoff_doubling_within_tail_bound():
    small = limits.chi_estimate(2.2, 5, R_cut=10.0, samples=20, seed=4)
    large = limits.chi_estimate(2.2, 5, R_cut=20.0, samples=20, seed=4)
    assert np.all(np.abs(large.values - small.values) < small.tail_bound)
