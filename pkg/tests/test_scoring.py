import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from fpld.core import DomainError, FpldNatural, SupportInterval, cdf, quantile, sample
from fpld.scoring import (
    crps_fpld,
    crps_fpld_quadrature,
    crps_gamma,
    crps_lognormal,
    crps_quadrature,
    gamma_cdf,
    lognormal_cdf,
    mean_crps,
    permutation_test_crps,
    pit_errors,
    qq_points,
    skill_score,
)
from helpers import random_naturals

UNIFORM = FpldNatural(0.0, 2.0, 0.0, 1.0, 1.0)


def test_uniform_crps_at_centre():
    assert crps_fpld(UNIFORM, 0.0) == pytest.approx(1 / 6, abs=1e-12)


def test_uniform_crps_grows_away_from_centre():
    assert crps_fpld(UNIFORM, 0.0) < crps_fpld(UNIFORM, 0.9)


def test_crps_outside_support_is_mean_distance():
    # below the support the score is E|Y - y| - E|Y - Y'|/2 = -y - 1/3 for U(-1, 1)
    for y in (-1.0, -2.5, -10.0):
        assert crps_fpld(UNIFORM, y) == pytest.approx(-y - 1 / 3, abs=1e-12)


def test_crps_vectorised_matches_scalar():
    lam = random_naturals(1, seed=1)[0]
    y = sample(lam, 20, seed=1)
    np.testing.assert_allclose(crps_fpld(lam, y), [crps_fpld(lam, v) for v in y], rtol=1e-14)


def test_crps_matches_quadrature_on_random_cases():
    rng = np.random.default_rng(2)
    for lam in random_naturals(60, seed=2):
        y = float(quantile(lam, rng.uniform(0.001, 0.999)))
        assert crps_fpld(lam, y) == pytest.approx(crps_fpld_quadrature(lam, y), abs=1e-6)


@pytest.mark.parametrize("l4,l5", [(0.0, 0.3), (0.4, 0.0), (0.0, 0.0), (1e-9, -1e-9), (0.2, -0.4)])
def test_crps_limit_cases_match_quadrature(l4, l5):
    lam = FpldNatural(3.0, 2.0, 0.2, l4, l5)
    for y in (1.0, 3.0, 6.0):
        assert crps_fpld(lam, y) == pytest.approx(crps_fpld_quadrature(lam, y), abs=1e-6)


def test_crps_matches_energy_form():
    # CRPS = E|Y - y| - E|Y - Y'|/2, both as integrals over the probability scale
    lam = FpldNatural(1.0, 3.0, -0.3, 0.5, 0.2)
    y = 1.7
    e1, _ = integrate.quad(lambda p: abs(quantile(lam, p) - y), 0, 1, points=[cdf(lam, y)], limit=200)
    e2, _ = integrate.quad(lambda p: (2 * p - 1) * quantile(lam, p), 0, 1, limit=200)
    assert crps_fpld(lam, y) == pytest.approx(e1 - e2, abs=1e-8)


def test_crps_rejects_heavy_tails_and_nonfinite():
    with pytest.raises(DomainError):
        crps_fpld(FpldNatural(0, 1, 0, 0.5, -1.0), 0.0)
    with pytest.raises(DomainError):
        crps_fpld(UNIFORM, math.nan)


@given(st.floats(-3, 3))
@settings(max_examples=50)
def test_crps_is_nonnegative(y):
    assert crps_fpld(FpldNatural(0.0, 1.0, 0.4, 0.1, 0.6), y) >= 0


def test_quadrature_uniform_unit_interval():
    val = crps_quadrature(lambda t: min(max(t, 0.0), 1.0), SupportInterval(0.0, 1.0), 0.5)
    assert val == pytest.approx(1 / 12, abs=1e-10)


def test_quadrature_increases_below_support():
    f = lambda t: min(max(t, 0.0), 1.0)
    vals = [crps_quadrature(f, SupportInterval(0.0, 1.0), y) for y in (-0.5, -1.0, -2.0)]
    assert vals[0] < vals[1] < vals[2]


def test_lognormal_crps_matches_quadrature():
    for y in (0.3, 1.0, 4.0, -1.0):
        ref = crps_quadrature(lognormal_cdf(0.2, 0.6), SupportInterval(0.0, math.inf), y)
        assert crps_lognormal(0.2, 0.6, y) == pytest.approx(ref, abs=1e-7)


def test_gamma_crps_matches_quadrature():
    for y in (0.3, 2.0, 7.0, -0.5):
        ref = crps_quadrature(gamma_cdf(2.5, 1.3), SupportInterval(0.0, math.inf), y)
        assert crps_gamma(2.5, 1.3, y) == pytest.approx(ref, abs=1e-7)


def test_mean_crps_examples():
    lam = random_naturals(1, seed=3)[0]
    y = sample(lam, 30, seed=3)
    assert mean_crps(lam, y[:1]) == pytest.approx(crps_fpld(lam, y[0]))
    assert mean_crps(lam, np.concatenate([y, y])) == pytest.approx(mean_crps(lam, y), rel=1e-14)
    assert mean_crps([lam] * 30, y) == pytest.approx(mean_crps(lam, y), rel=1e-14)
    with pytest.raises(DomainError):
        mean_crps(lam, [])
    with pytest.raises(DomainError):
        mean_crps([lam] * 3, y)


def test_skill_of_truth_is_zero():
    lam = random_naturals(1, seed=4)[0]
    y = sample(lam, 500, seed=4)
    assert skill_score(lam, lam, y) == 0.0
    assert skill_score(lam, lam, mode="expected", mc_samples=2000) == 0.0


def test_skill_of_shifted_forecast_is_positive():
    lam = random_naturals(1, seed=5)[0]
    y = sample(lam, 500, seed=5)
    off = lam.shifted(5 * lam.lambda2)
    assert skill_score(off, lam, y) > 0
    assert skill_score(off, lam, mode="expected", mc_samples=2000) > 0


def test_skill_modes_are_validated():
    with pytest.raises(DomainError):
        skill_score(UNIFORM, UNIFORM, [0.0], mode="other")
    with pytest.raises(DomainError):
        skill_score(UNIFORM, UNIFORM)


def test_pit_errors_examples():
    assert pit_errors([0.25, 0.75]).e_mu == 0.0
    n = 1000
    grid = pit_errors((np.arange(1, n + 1) - 0.5) / n)
    assert abs(grid.e_mu) < 1e-12 and abs(grid.e_sigma) < 1e-3
    with pytest.raises(DomainError):
        pit_errors([0.5])
    with pytest.raises(DomainError):
        pit_errors([0.2, 1.2])


def test_pit_sigma_uses_sample_sd():
    u = np.array([0.1, 0.4, 0.8])
    assert pit_errors(u).e_sigma == pytest.approx(np.std(u, ddof=1) - 1 / math.sqrt(12))


def test_permutation_test_examples(rng):
    b = rng.normal(size=100)
    assert permutation_test_crps(b, b, n_perm=500) == 1.0
    assert permutation_test_crps(b + 1.0, b, n_perm=2000) <= 0.01
    with pytest.raises(DomainError):
        permutation_test_crps(b, b, n_perm=0)


def test_permutation_test_is_calibrated_under_the_null(rng):
    pvals = [permutation_test_crps(rng.normal(size=40), rng.normal(size=40), n_perm=200, seed=s)
             for s in range(200)]
    assert 0.02 < np.mean(np.array(pvals) <= 0.1) < 0.2


def test_qq_points():
    lam = random_naturals(1, seed=6)[0]
    star_scale = to_scale(lam)
    y = sample(lam, 100_000, seed=6)
    pts = np.array(qq_points(lam, y))
    assert len(pts) == len(y)
    central = pts[5000:95000]
    assert np.max(np.abs(central[:, 0] - central[:, 1])) <= 0.05 * star_scale
    exact = quantile(lam, (np.arange(1, 51) - 0.5) / 50)
    pts = np.array(qq_points(lam, exact))
    np.testing.assert_allclose(pts[:, 0], pts[:, 1], atol=1e-12)


def to_scale(lam):
    q1, q3 = quantile(lam, [0.25, 0.75])
    return q3 - q1


def test_lognormal_and_gamma_cdfs():
    assert lognormal_cdf(0.0, 1.0)(1.0) == pytest.approx(0.5)
    assert gamma_cdf(1.0, 2.0)(1.0) == pytest.approx(stats.expon.cdf(2.0))
