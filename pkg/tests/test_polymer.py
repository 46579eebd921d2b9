from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from ndpolymer import polymer
from ndpolymer.env import LatticeEnvironment
from ndpolymer.errors import ValidationError, WindowError
from ndpolymer.model import ModelParams


def enumerate_log_Z(env, N, beta, h):
    """Average of exp(beta * sum over the range) over every path, in plain Python."""
    d = env.d
    steps = [s * np.eye(d, dtype=int)[a] for a in range(d) for s in (1, -1)]
    grid = env.grid(N) - h
    terms = []
    maxima = []
    for seq in itertools.product(steps, repeat=N):
        pos = np.vstack([np.zeros(d, int), np.cumsum(seq, axis=0)]) if N else np.zeros((1, d), int)
        sites = {tuple(p) for p in pos}
        terms.append(beta * sum(grid[tuple(np.array(s) + N)] for s in sites))
        maxima.append(int(np.abs(pos).max()))
    terms = np.array(terms)
    top = terms.max()
    return top + math.log(np.exp(terms - top).mean()), np.array(maxima)


@pytest.fixture
def env2():
    return LatticeEnvironment(d=2, alpha=1.5, seed=17)


def test_zero_coupling_is_one(env2):
    assert polymer.partition_exact(env2, 6, 0.0).logZ == pytest.approx(0.0, abs=1e-14)


def test_single_step_hand_formula():
    vals = {(0, 0): 1.3, (1, 0): 2.0, (-1, 0): 1.1, (0, 1): 4.0, (0, -1): 1.7}
    env = LatticeEnvironment.from_values(vals, d=2, alpha=1.5)
    beta, h = 0.7, 0.4
    want = math.exp(beta * (1.3 - h)) * 0.25 * sum(math.exp(beta * (v - h)) for k, v in vals.items() if k != (0, 0))
    assert polymer.partition_exact(env, 1, beta, h).Z == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("d,N", [(2, 5), (3, 3)])
def test_exact_matches_python_enumeration(d, N):
    env = LatticeEnvironment(d=d, alpha=1.2, seed=3)
    want, _ = enumerate_log_Z(env, N, 0.3, 0.5)
    assert polymer.partition_exact(env, N, 0.3, 0.5).logZ == pytest.approx(want, rel=1e-12)


def test_exact_size_guard(env2):
    with pytest.raises(ValidationError):
        polymer.partition_exact(env2, 14, 1.0)


def test_shift_invariance_exact_and_mc(env2):
    c = 1.75
    moved = env2.shifted(c)
    assert polymer.partition_exact(moved, 7, 0.6, 0.2 + c).logZ == pytest.approx(
        polymer.partition_exact(env2, 7, 0.6, 0.2).logZ, rel=1e-12)
    a = polymer.partition_mc(env2, 30, 0.3, 0.2, 4000, seed=1)
    b = polymer.partition_mc(moved, 30, 0.3, 0.2 + c, 4000, seed=1)
    assert a.logZ == pytest.approx(b.logZ, rel=1e-12)


def test_mc_agrees_with_exact(env2):
    exact = polymer.partition_exact(env2, 8, 0.4, 1.0)
    est = polymer.partition_mc(env2, 8, 0.4, 1.0, 100_000, seed=4)
    assert abs(est.Z - exact.Z) <= 3 * est.stderr


def test_restrictions_partition_the_paths(env2):
    N, m = 40, 6
    whole = polymer.partition_mc(env2, N, 0.2, 1.0, 5000, seed=2)
    inner = polymer.partition_mc(env2, N, 0.2, 1.0, 5000, seed=2, restriction=("le", m))
    outer = polymer.partition_mc(env2, N, 0.2, 1.0, 5000, seed=2, restriction=("between", m + 1, N + 1))
    assert whole.Z == pytest.approx(inner.Z + outer.Z, rel=1e-12)


def test_zero_coupling_restriction_is_a_probability(env2):
    N, m = 6, 2
    _, maxima = enumerate_log_Z(env2, N, 0.0, 0.0)
    est = polymer.partition_mc(env2, N, 0.0, 0.0, 50_000, seed=6, restriction=("le", m))
    p = (maxima <= m).mean()
    assert abs(est.Z - p) <= 3 * math.sqrt(p * (1 - p) / 50_000)


def test_monotone_in_site_values(env2):
    sites, vals = env2.with_radius(3).ball()
    base_exact = polymer.partition_exact(env2, 6, 0.5, 1.0).logZ
    base_mc = polymer.partition_mc(env2, 20, 0.5, 1.0, 3000, seed=3).logZ
    for site, v in list(zip(map(tuple, sites), vals))[:10]:
        bumped = LatticeEnvironment(2, 1.5, 17, overrides={site: float(v) + 2.0})
        assert polymer.partition_exact(bumped, 6, 0.5, 1.0).logZ >= base_exact - 1e-12
        assert polymer.partition_mc(bumped, 20, 0.5, 1.0, 3000, seed=3).logZ >= base_mc - 1e-12


def test_log_convex_in_beta(env2):
    betas = np.linspace(0, 2, 11)
    logs = np.array([polymer.partition_exact(env2, 7, b, 1.0).logZ for b in betas])
    assert np.all(np.diff(logs, 2) >= -1e-12)


def test_bridge_proposal_is_unbiased(env2):
    exact = polymer.partition_exact(env2, 8, 0.8, 1.0)
    prop = polymer.targeted_proposal(env2, [8], [0.8], 1.0, 0.75)
    assert prop.size > 0
    est = polymer.partition_mc(env2, 8, 0.8, 1.0, 100_000, seed=8, proposal=prop)
    assert abs(est.Z - exact.Z) <= 3 * est.stderr


def test_bridge_log_probability_matches_enumeration():
    counts = {}
    for seq in itertools.product(((1, 0), (-1, 0), (0, 1), (0, -1)), repeat=6):
        end = tuple(np.sum(seq, axis=0))
        counts[end] = counts.get(end, 0) + 1
    for y, c in counts.items():
        assert math.exp(polymer.log_p2(6, y)) == pytest.approx(c / 4 ** 6, rel=1e-12)


def test_proposal_validation():
    with pytest.raises(ValidationError):
        polymer.Proposal(np.array([[3, 0]]), np.array([2]), np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        polymer.Proposal(np.array([[1, 0]]), np.array([2]), np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        polymer.Proposal(np.array([[1, 0]]), np.array([1]), np.array([1.0]))


def test_mc_needs_replicas(env2):
    with pytest.raises(ValidationError):
        polymer.partition_mc(env2, 8, 0.1, 0.0, 10, seed=0)


def test_heavy_weight_warning():
    # alpha = 1/2 at beta = 1: a single walk dominates the average
    env = LatticeEnvironment(2, 0.5, 0)
    with pytest.warns(RuntimeWarning):
        est = polymer.partition_mc(env, 20, 1.0, 0.0, 1000, seed=0)
    assert "heavy-weight" in est.flags and est.ess < 2


def test_region_A_statistic_crude_bound():
    p = ModelParams(2, 1.5, 0.1, beta_hat=1.0)
    env = LatticeEnvironment(2, 1.5, 23)
    for N in (8, 16, 32):
        stat = polymer.region_A_statistic(p, N, env, 2000, seed=1)
        assert stat.value <= polymer.crude_upper_bound_A(p, N, env)
        assert stat.extra["h_correction_bound"] == 0.0
    with pytest.raises(WindowError):
        polymer.region_A_statistic(ModelParams(2, 1.5, 0.5), 8, env, 2000)


@pytest.mark.filterwarnings("ignore:top replica")
def test_region_B_normalisation_and_restriction():
    p = ModelParams(2, 1.5, 0.5)
    N = 256
    stat = polymer.region_B_statistic(p, N, 5, 4000, seed=2)
    assert stat.normalisation == pytest.approx(N ** 0.5)
    assert stat.extra["xi"] == pytest.approx(0.75)
    env = LatticeEnvironment(2, 1.5, 5)
    b = 1.0 * N ** -0.5
    full = polymer.partition_mc(env, N, b, 3.0, 4000, seed=2)
    kept = polymer.partition_mc(env, N, b, 3.0, 4000, seed=2, restriction=("le", int(3 * N ** 0.75)))
    assert abs(full.logZ - kept.logZ) / N ** 0.5 < 1e-2


def test_region_C_windows():
    env = 0
    with pytest.raises(WindowError):
        polymer.region_C_statistic(ModelParams(2, 1.5, 0.5), 8, env, 1000, "chi")
    with pytest.raises(WindowError):
        polymer.region_C_statistic(ModelParams(3, 2.5, 2.0), 8, env, 1000, "chi")
    with pytest.raises(WindowError):
        polymer.region_C_statistic(ModelParams(5, 2.0, 2.0), 8, env, 1000, "gaussian")
    with pytest.raises(ValidationError):
        polymer.region_C_statistic(ModelParams(3, 2.5, 2.0), 8, env, 1000, "other")


def test_region_C_chi_normalisation():
    p = ModelParams(5, 2.5, 2.0)
    stat = polymer.region_C_statistic(p, 16, 3, 2000, "chi", seed=1)
    assert stat.value == pytest.approx(stat.logZ.logZ / 16 ** -2.0)


def test_gaussian_centring_trend():
    p = ModelParams(3, 2.5, 0.62)
    polymer.region_C_window(p.alpha, p.d, "gaussian")
    grid = [2 ** 6, 2 ** 8, 2 ** 10]
    raw, scaled = [], []
    for N in grid:
        b = N ** -p.gamma
        er, _ = polymer.expected_range(N, 3, 2000, seed=N)
        raw.append(b * b * er)
        scaled.append(b * b * er / (polymer.gaussian_scale(N, 3) * b))
    assert raw == sorted(raw, reverse=True)
    assert scaled == sorted(scaled)


def test_fluctuation_grid_validation():
    p = ModelParams(2, 1.5, 0.8)
    with pytest.raises(ValidationError):
        polymer.fluctuation_exponent(p, [64, 128, 256], 2, 100, seed=0)
    with pytest.raises(ValidationError):
        polymer.fluctuation_exponent(p, [64, 128, 256, 1024], 2, 100, seed=0)
    with pytest.raises(ValidationError):
        polymer.fluctuation_exponent(p, [64, 128, 256, 512], 2, 100, seed=0, proposal="other")


def test_fluctuation_fit_shape():
    p = ModelParams(2, 1.5, 0.8)
    fit = polymer.fluctuation_exponent(p, [64, 128, 256, 512], 4, 300, seed=1, bootstrap=200)
    assert fit.per_env.shape == (4, 4)
    assert fit.ci[0] <= fit.ci[1]
    assert np.all(np.diff(fit.medians) > 0)


def test_overshoot_constant():
    # the expected overshoot of a Gaussian random walk over a high level
    assert polymer.OVERSHOOT == pytest.approx(0.5825971579390107, rel=1e-14)
