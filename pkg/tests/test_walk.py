from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from ndpolymer import entropy, walk
from ndpolymer.errors import ValidationError

# Visit-probability bound constants: C2 chosen, C1 fitted on an exhaustive
# calibration grid (single sites and nearby ordered pairs, N in {16, 64},
# upper 3-sigma MC values) and frozen.
VISIT_C1, VISIT_C2 = 0.58, 0.5


def watson_green_origin() -> float:
    """Closed form of the simple cubic lattice Green function at the origin."""
    g = special.gamma
    return math.sqrt(6) / (32 * math.pi ** 3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24)


def enumerate_paths(N: int, d: int):
    steps = [s * np.eye(d, dtype=int)[a] for a in range(d) for s in (1, -1)]
    for seq in itertools.product(steps, repeat=N):
        yield np.vstack([np.zeros(d, int), np.cumsum(seq, axis=0)]) if N else np.zeros((1, d), int)


def test_empty_walk():
    path = walk.simulate_walk(0, 3, seed=1)
    assert path.steps.tolist() == [[0, 0, 0]]


def test_walk_steps_are_nearest_neighbour():
    path = walk.simulate_walk(500, 4, seed=3)
    assert np.all(np.abs(np.diff(path.steps, axis=0)).sum(axis=1) == 1)
    summary = walk.range_summary(path)
    assert summary.size <= 501 and (0, 0, 0, 0) in summary.range
    assert summary.max_disp <= 500


def test_mean_square_displacement():
    N, n = 100, 100_000
    sq = np.array([(walk.simulate_walk(N, 2, seed=5, replica=i).steps[-1] ** 2).sum() for i in range(n)])
    assert abs(sq.mean() - N) <= 3 * sq.std(ddof=1) / math.sqrt(n)


def test_range_fraction_near_escape_probability():
    sizes = [walk.range_summary(walk.simulate_walk(10_000, 3, seed=3, replica=i)).size for i in range(200)]
    # the range grows like lambda_3 N plus a sqrt(N) correction
    assert np.mean(sizes) / 1e4 == pytest.approx(walk.escape_probability(3), rel=0.02)


def test_single_step_visit():
    est = walk.visit_probability_mc(np.array([[1, 0]]), 1, 40_000, seed=2)
    assert abs(est.mean - 0.25) <= 3 * est.stderr


def test_visit_rejects_origin_and_duplicates():
    with pytest.raises(ValidationError):
        walk.visit_probability_mc(np.array([[1, 0], [0, 0]]), 5, 10, seed=0)
    with pytest.raises(ValidationError):
        walk.visit_probability_mc(np.array([[1, 0], [1, 0]]), 5, 10, seed=0)


def test_visit_probability_monotone_in_N():
    ests = walk.visit_probability_mc(np.array([[2, 1], [0, 3]]), [4, 8, 16, 32, 64], 5000, seed=4)
    means = [e.mean for e in ests]
    assert means == sorted(means)


def test_visit_probability_exact_small():
    delta = np.array([[1, 0], [1, 1]])
    hits = 0
    for path in enumerate_paths(4, 2):
        seq = [tuple(p) for p in path[1:]]
        if (1, 0) in seq and (1, 1) in seq[seq.index((1, 0)) + 1:]:
            hits += 1
    est = walk.visit_probability_mc(delta, 4, 50_000, seed=9)
    assert abs(est.mean - hits / 4 ** 4) <= 3 * est.stderr


def test_visit_upper_bound_held_out():
    gen = np.random.default_rng(2)
    for N in (16, 32, 64):
        R = int(1.5 * math.sqrt(N))
        for ell in (1, 2, 3):
            for _ in range(20):
                while True:
                    pts = gen.integers(-R, R + 1, size=(ell, 2))
                    if np.all(np.abs(pts).sum(1) > 0) and len({tuple(p) for p in pts}) == ell:
                        break
                p = walk.visit_probability_mc(pts, N, 20_000, seed=7).mean
                bound = VISIT_C1 ** ell * math.exp(-VISIT_C2 * entropy.ent(pts, 2) / N)
                assert p <= bound


def test_endpoint_law_matches_enumeration():
    N = 5
    for d in (2, 3):
        counts = {}
        for path in enumerate_paths(N, d):
            key = tuple(path[-1])
            counts[key] = counts.get(key, 0) + 1
        for y, c in counts.items():
            assert math.exp(walk.log_prob_endpoint(N, y)) == pytest.approx(c / (2 * d) ** N, rel=1e-10)
        assert walk.log_prob_endpoint(N, (1, 1) + (0,) * (d - 2)) == -math.inf


def test_rate_single_point_moderate_deviation():
    rows = walk.ld_rate_check([0.5, 0.0], 0.75, [2 ** 10, 2 ** 12, 2 ** 14])
    limit = 0.5 * 2 * 0.25
    gaps = [abs(r - limit) for _, r in rows]
    assert gaps == sorted(gaps, reverse=True)
    # the origin only pays the polynomial local-limit prefactor
    origin = [r for _, r in walk.ld_rate_check([0.0, 0.0], 0.75, [2 ** 6, 2 ** 10, 2 ** 14])]
    assert origin == sorted(origin, reverse=True) and origin[-1] < 0.1


def test_rate_single_point_large_deviation():
    rows = walk.ld_rate_check([0.4, 0.0], 1.0, [2 ** 10, 2 ** 12, 2 ** 14])
    assert rows[-1][1] == pytest.approx(entropy.rate_Jd([0.4, 0.0]), rel=1e-2)


def test_rate_check_preconditions():
    with pytest.raises(ValidationError):
        walk.ld_rate_check([0.6, 0.5], 1.0, [16])
    with pytest.raises(ValidationError):
        walk.ld_rate_check([0.1, 0.0], 0.5, [16])


def test_escape_probability_against_closed_form():
    assert walk.escape_probability(3) == pytest.approx(1 / watson_green_origin(), rel=1e-6)
    assert walk.escape_probability(3) < walk.escape_probability(5) < 1
    with pytest.raises(ValidationError):
        walk.escape_probability(2)


def test_hitting_probability_symmetry_and_identity():
    x = np.array([2, -1, 3])
    base = walk.hitting_probability_inf(x, 3)
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            assert walk.hitting_probability_inf(x[list(perm)] * np.array(signs), 3) == pytest.approx(base, rel=1e-10)
    assert walk.hitting_probability_inf(np.zeros(3, int), 3) == 1.0
    assert base <= walk.green_function(x, 3) * walk.escape_probability(3) * (1 + 1e-12)


def test_hitting_square_sum_converges_d5():
    shells = []
    for R in (2, 4, 8, 16):
        axis = np.arange(-R, R + 1)
        pts = np.stack(np.meshgrid(*[axis] * 5, indexing="ij"), -1).reshape(-1, 5) if R <= 4 else None
        if pts is None:
            break
        norms = np.linalg.norm(pts, axis=1)
        pts = pts[(norms > R / 2) & (norms <= R)]
        shells.append(float((walk.hitting_probability_inf(pts, 5) ** 2).sum()))
    assert shells[1] < shells[0]


def test_f_two_dimensions_series_oracle():
    z = 1.0
    k = np.arange(1, 60)
    series = -np.euler_gamma - math.log(z) - np.sum((-z) ** k / (k * special.factorial(k)))
    assert walk.f_profile([1.0, 1.0]) == pytest.approx(series, rel=1e-10)
    assert walk.f_profile([1.0, 1.0]) == pytest.approx(0.21938, abs=1e-5)


@pytest.mark.parametrize("d", [3, 4, 5])
def test_f_against_quadrature(d):
    x = np.zeros(d)
    x[0] = 0.7
    lam = walk.escape_probability(d)
    heat = lambda u: (2 * math.pi * u / d) ** (-d / 2) * math.exp(-d * 0.49 / (2 * u))
    val, _ = integrate.quad(heat, 0, 1, epsabs=0, epsrel=1e-12)
    assert walk.f_profile(x) == pytest.approx(2 * lam * val, rel=1e-8)


@pytest.mark.parametrize("d", [2, 3, 5])
def test_f_radially_non_increasing(d):
    radii = np.linspace(0.05, 4, 100)
    vals = [walk.f_profile(np.r_[r, np.zeros(d - 1)]) for r in radii]
    assert np.all(np.diff(vals) <= 0)


@pytest.mark.parametrize("d", [2, 3, 5])
def test_f_small_radius_asymptotics(d):
    ratios = [walk.f_profile(np.r_[r, np.zeros(d - 1)]) / walk.f_small_x_leading(r, d) for r in (1e-3, 1e-6)]
    assert abs(ratios[1] - 1) < abs(ratios[0] - 1) + 1e-12
    assert ratios[1] == pytest.approx(1, rel=0.05)


def test_f_rejects_origin():
    with pytest.raises(ValidationError):
        walk.f_profile([0.0, 0.0])


def _hitting_limit_d3(x) -> float:
    lam = walk.escape_probability(3)
    r2 = float(np.dot(x, x))
    heat = lambda u: (2 * math.pi * u / 3) ** -1.5 * math.exp(-3 * r2 / (2 * u))
    return lam * integrate.quad(heat, 0, 1)[0]


def test_local_limit_against_green_sum_oracle():
    # limit of the hitting probability from the renewal identity
    # P(y in R_N) ~ lambda_d * sum_{n <= N} P(S_n = y)
    row = walk.local_limit_check([1, 0, 0], 3, [10_000], 100_000, seed=1)[0]
    assert row["scaled"] == pytest.approx(_hitting_limit_d3([1, 0, 0]), rel=0.2)


@pytest.mark.xfail(strict=False, reason="printed d>=3 profile carries a factor 2 over the simulated limit")
def test_local_limit_against_printed_profile():
    row = walk.local_limit_check([1, 0, 0], 3, [10_000], 100_000, seed=1)[0]
    assert row["ratio"] == pytest.approx(1.0, rel=0.2)


def test_overlap_single_step():
    assert walk.overlap_sum(1, 2, mode="exact") == pytest.approx(1.25, rel=1e-14)
    est = walk.overlap_sum(1, 2, mode="mc", replicas=40_000, seed=3)
    assert abs(est.mean - 1.25) <= 4 * est.stderr


def test_exact_hit_probabilities_match_enumeration():
    N, d = 3, 2
    counts = {}
    for path in enumerate_paths(N, d):
        for s in {tuple(p) for p in path}:
            counts[s] = counts.get(s, 0) + 1
    hit, _ = walk.hit_probabilities_exact(N, d)
    for s, c in counts.items():
        assert hit[s[0] + N, s[1] + N] == pytest.approx(c / 4 ** N, abs=1e-14)


def test_intersection_identity():
    exact = walk.overlap_sum(16, 2, mode="exact")
    est = walk.overlap_sum(16, 2, mode="mc", replicas=40_000, seed=5)
    assert abs(est.mean - exact) <= 4 * est.stderr


@given(z=st.lists(st.floats(-50, 50), min_size=2, max_size=4), parity=st.integers(0, 1))
@settings(max_examples=100)
def test_parity_rounding(z, parity):
    y = walk.nearest_site_with_parity(z, parity)
    assert int(y.sum()) % 2 == parity
    assert np.abs(y - np.asarray(z)).sum() <= len(z) / 2 + 1 + 1e-9
