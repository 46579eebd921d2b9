from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from ndpolymer import entropy
from ndpolymer.errors import ValidationError


def test_rate_J_values():
    assert entropy.rate_J(0.0) == 0.0
    assert entropy.rate_J(1.0) == pytest.approx(math.log(2))
    assert entropy.rate_J(-1.0) == pytest.approx(math.log(2))
    assert entropy.rate_J(1.5) == math.inf
    assert entropy.rate_J(1e-3) / 5e-7 == pytest.approx(1.0, rel=1e-5)


@given(st.floats(-1, 1))
def test_rate_J_even_and_continuous(t):
    assert entropy.rate_J(t) == entropy.rate_J(-t)
    assert entropy.rate_J(t) >= 0.5 * t * t - 1e-15


def _jd_objective(u, x):
    d = len(x)
    total = 0.0
    for ui, xi in zip(u, x):
        total += ui * (entropy.rate_J(xi / ui) + math.log(d * ui))
    return total


def test_rate_Jd_at_origin():
    assert entropy.rate_Jd(np.zeros(3)) == 0.0
    assert np.allclose(entropy.rate_Jd_allocation(np.zeros(3)), 1 / 3)


def test_rate_Jd_grid_search_oracle():
    x = (0.5, 0.0)
    grid = np.linspace(0.5 + 1e-9, 1 - 1e-9, 100_001)
    vals = [_jd_objective((u, 1 - u), x) for u in grid]
    best = grid[int(np.argmin(vals))]
    res = optimize.minimize_scalar(lambda u: _jd_objective((u, 1 - u), x),
                                   bounds=(best - 1e-4, best + 1e-4), method="bounded",
                                   options=dict(xatol=1e-14))
    assert entropy.rate_Jd(x) == pytest.approx(res.fun, abs=1e-8)


def _simplex_minimum(x):
    d = len(x)
    start = np.abs(x) + (1 - np.abs(x).sum()) / d
    res = optimize.minimize(
        lambda z: _jd_objective(np.exp(z) / np.exp(z).sum(), x),
        np.log(start), method="Nelder-Mead", options=dict(xatol=1e-12, fatol=1e-14, maxiter=20000))
    return res.fun


@pytest.mark.parametrize("x", [(0.2, -0.1, 0.3), (0.05, 0.6), (0.1, 0.1, 0.1, 0.1)])
def test_rate_Jd_against_simplex_solver(x):
    assert entropy.rate_Jd(x) == pytest.approx(_simplex_minimum(x), abs=1e-8)


unit_vec = st.lists(st.floats(-1, 1), min_size=2, max_size=6)


@given(unit_vec)
@settings(max_examples=300)
def test_rate_Jd_sandwich_and_quadratic_floor(x):
    x = np.asarray(x)
    l1 = np.abs(x).sum()
    v = entropy.rate_Jd(x)
    if l1 > 1:
        assert v == math.inf
        return
    d = len(x)
    assert entropy.rate_J(l1) - 1e-12 <= v <= entropy.rate_J(l1) + math.log(d) + 1e-12
    assert v >= 0.5 * float(x @ x) - 1e-12


@given(unit_vec, st.randoms(use_true_random=False))
def test_rate_Jd_lattice_symmetry(x, rnd):
    x = np.asarray(x) / max(1.0, 1.01 * np.abs(x).sum())
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    signs = np.array([rnd.choice((-1, 1)) for _ in x])
    assert entropy.rate_Jd(x[perm] * signs) == pytest.approx(entropy.rate_Jd(x), rel=1e-12, abs=1e-15)


def test_ent_examples():
    assert entropy.ent([(1, 0)], 2) == pytest.approx(1.0)
    assert entropy.ent([(1, 0), (1, 1)], 2) == pytest.approx(4.0)
    assert entropy.ent([(1, 1), (1, 0)], 2) == pytest.approx((math.sqrt(2) + 1) ** 2)


def test_ent_N_examples():
    res = entropy.ent_N([(1, 0)], 2, 4)
    assert res.value == pytest.approx(0.25)
    delta = [(1, 0), (1, 2), (-1, 2)]
    res = entropy.ent_N(delta, 2, 10)
    assert res.allocation.sum() == pytest.approx(10)
    assert entropy.quadratic_cost(delta, 2, res.allocation) == pytest.approx(res.value, rel=1e-12)


def _allocation_minimum(delta, d, N):
    k = len(delta)
    f = lambda z: entropy.quadratic_cost(delta, d, N * np.exp(z) / np.exp(z).sum())
    res = optimize.minimize(f, np.zeros(k), method="BFGS", options=dict(gtol=1e-12))
    return res.fun


def test_ent_N_against_numerical_allocation():
    gen = np.random.default_rng(3)
    for _ in range(20):
        k = int(gen.integers(1, 7))
        delta = gen.normal(size=(k, 2)) * 3
        N = float(gen.uniform(1, 50))
        closed = entropy.ent_N(delta, 2, N).value
        assert closed == pytest.approx(_allocation_minimum(delta, 2, N), rel=1e-10)


points = st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=6)


@given(points, st.floats(0, 2 * math.pi), st.floats(0.1, 10))
def test_ent_rotation_and_scaling(delta, angle, scale):
    delta = np.asarray(delta)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    base = entropy.ent(delta, 2)
    assert entropy.ent(delta @ rot.T, 2) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert entropy.ent(scale * delta, 2) == pytest.approx(scale ** 2 * base, rel=1e-9, abs=1e-9)
    assert entropy.ent_N(delta, 2, 7.0).value == pytest.approx(base / 7.0, rel=1e-12, abs=1e-300)


def test_hat_ent_infinite_beyond_reach():
    assert entropy.hat_ent_N([(3, 2)], 2, 4).value == math.inf


def _hat_minimum(delta, d, N):
    inc = np.diff(np.vstack([np.zeros(d), np.asarray(delta, float)]), axis=0)
    l1 = np.abs(inc).sum(axis=1)

    def cost(z):
        tau = N * np.exp(z) / np.exp(z).sum()
        if np.any(l1 > tau):
            return 1e6
        return sum(t * entropy.rate_Jd(y / t) for y, t in zip(inc, tau))

    start = np.log(l1 / l1.sum())
    res = optimize.minimize(cost, start, method="Nelder-Mead",
                            options=dict(xatol=1e-12, fatol=1e-14, maxiter=40000))
    return res.fun


def test_hat_ent_against_solver():
    gen = np.random.default_rng(8)
    for _ in range(10):
        k = int(gen.integers(1, 4))
        delta = gen.normal(size=(k, 2)) * 2
        N = 2.0 * np.abs(np.diff(np.vstack([np.zeros(2), delta]), axis=0)).sum() + 1
        got = entropy.hat_ent_N(delta, 2, N)
        assert got.value <= _hat_minimum(delta, 2, N) + 1e-8
        assert entropy.rate_cost(delta, 2, got.allocation) == pytest.approx(got.value, rel=1e-8)


@given(st.lists(st.tuples(st.integers(-6, 6), st.integers(-6, 6), st.integers(-6, 6)),
                min_size=1, max_size=5), st.floats(20, 200))
@settings(max_examples=100, deadline=None)
def test_hat_ent_bounds_and_monotone(delta, N):
    h = entropy.hat_ent_N(delta, 3, N).value
    assert h >= entropy.ent_N(delta, 3, N).value / 3 - 1e-9
    assert entropy.hat_ent_N(delta, 3, 2 * N).value <= h + 1e-9


def test_hat_ent_small_scale_matches_quadratic():
    delta = 1e-3 * np.array([(1.0, 0.5), (-0.3, 2.0), (0.7, 0.7)])
    ratio = entropy.hat_ent_N(delta, 2, 1.0).value / entropy.ent_N(delta, 2, 1.0).value
    assert ratio == pytest.approx(1.0, abs=0.01)


def test_shortest_visit_examples():
    res = entropy.shortest_visit_length([(2, 0), (1, 0)])
    assert res.length == pytest.approx(2.0)
    assert res.order == (1, 0)
    assert entropy.shortest_visit_length([(3, 4)]).length == pytest.approx(5.0)


def _brute_length(pts):
    best = math.inf
    for perm in itertools.permutations(range(len(pts))):
        best = min(best, entropy.path_length(pts[list(perm)]))
    return best


def test_shortest_visit_against_permutations():
    gen = np.random.default_rng(12)
    for _ in range(200):
        k = int(gen.integers(1, 9))
        d = int(gen.integers(2, 4))
        pts = gen.normal(size=(k, d))
        res = entropy.shortest_visit_length(pts)
        assert res.length == pytest.approx(_brute_length(pts), rel=1e-12)
        assert entropy.path_length(pts[list(res.order)]) == pytest.approx(res.length, rel=1e-12)
        for _ in range(100 if k <= 3 else 5):
            assert res.length <= entropy.path_length(pts[gen.permutation(k)]) + 1e-12


def test_shortest_visit_size_cap_and_greedy():
    pts = np.random.default_rng(1).normal(size=(23, 2))
    with pytest.raises(ValidationError):
        entropy.shortest_visit_length(pts)
    greedy = entropy.shortest_visit_length(pts, mode="greedy")
    assert not greedy.exact
    assert greedy.length == pytest.approx(entropy.path_length(pts[list(greedy.order)]))
