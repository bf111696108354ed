import math

import numpy as np
import pytest

from cookiewalk.bessel import PhiLambda
from cookiewalk.branching import simulate_excursions
from cookiewalk.env import CookieConfig
from cookiewalk.errors import DomainError, TruncationTooSevere
from cookiewalk.verify import (
    coupling_check, martingale_flatness, martingale_trace, moment_growth, mu_monte_carlo,
    mu_of_n, mu_table, optional_stopping_check, progeny_moment_divergence, sigma_laplace_bound,
    step_deviation_probabilities,
)


@pytest.fixture(scope="module")
def excursions(half):
    return simulate_excursions(half, 200_000, 31)


def test_mu_table_errors_small(kernel_half):
    tab = mu_table(kernel_half, 0.1)
    assert tab.m_err.max() < 1e-10
    assert tab.phi0 == pytest.approx(PhiLambda(0.1, 0.75).at_zero)
    assert tab.far_bound < 1e-10


def test_mu_of_n(kernel_half, kernel_small):
    tab = mu_table(kernel_half, 0.1)
    v, e = mu_of_n(5, 0.0, 0.1, kernel_half, table=tab)
    assert v == tab.m_tab[5]
    v2, _ = mu_of_n(5, 10.0, 0.1, kernel_half, table=tab)
    assert v2 == pytest.approx(v * math.exp(-1.0))
    with pytest.raises(DomainError):
        mu_of_n(5, 0.0, 0.0, kernel_half)
    with pytest.raises(TruncationTooSevere):
        mu_of_n(kernel_small.N, 0.0, 0.1, kernel_small, tol=1e-300)
    with pytest.raises(DomainError):
        mu_of_n(kernel_small.N + 1, 0.0, 0.1, kernel_small)


@pytest.mark.parametrize("j", [0, 1, 3, 10, 40])
def test_mu_matches_monte_carlo(half, kernel_half, j):
    tab = mu_table(kernel_half, 0.1)
    mean, se = mu_monte_carlo(half, tab, j, 2.0, 400_000, 40 + j)
    exact, err = mu_of_n(j, 2.0, 0.1, kernel_half, table=tab)
    assert abs(mean - exact) <= 4 * se + err


def test_trace_consistent(half, kernel_half):
    tr = martingale_trace(half, 0.1, 5, 2000, 3, kernel_half)
    ph = PhiLambda(0.1, half.nu)
    assert np.allclose(tr.recompute_W(ph), tr.W, rtol=1e-12)
    assert tr.Y[0] == pytest.approx(ph(5.0))
    assert tr.Z[-1] == 0 or len(tr.Z) == 2001
    # increments are bounded by a few phi(0)
    assert tr.max_increment <= 4 * ph.at_zero


@pytest.mark.parametrize("lam", [0.2, 0.05])
def test_optional_stopping(half, kernel_half, lam):
    r = optional_stopping_check(half, lam, 200_000, 5, kernel_half)
    assert r.passed()
    assert r.truncated == 0
    assert 0 < r.lhs < 1


def test_optional_stopping_guards(half, kernel_small):
    r = optional_stopping_check(half, 0.0, 10, 1)
    assert r.lhs == r.rhs == 0.0
    with pytest.raises(DomainError):
        optional_stopping_check(half, 2.0, 10, 1, kernel_small)
    with pytest.raises(DomainError):
        optional_stopping_check(CookieConfig.uniform(3, "9/10"), 0.1, 10, 1, kernel_small)


def test_flatness(half, kernel_half):
    r = martingale_flatness(half, 0.1, 10, 200, 50_000, 6, kernel_half)
    assert r.max_deviation_se <= 4
    assert r.max_increment <= r.increment_cap
    assert r.mean[0] == pytest.approx(r.Y0)


def test_coupling_small(half):
    r = coupling_check(half, levels=(50, 100), replicas=2000, seed=7)
    for n in (50, 100):
        assert r.law_pvalue[n] > 1e-4
        assert (r.gap[n] >= 0).all() and (r.gap[n] % 2 == 0).all()
    assert len(r.ks_consecutive) == 1


def test_coupling_needs_transience():
    with pytest.raises(DomainError):
        coupling_check(CookieConfig.from_strengths([0.5]), replicas=10)


def test_moment_growth_synthetic():
    rng = np.random.default_rng(0)
    pareto = rng.pareto(0.75, 400_000) + 1     # tail index 0.75
    assert moment_growth(pareto, 0.375).verdict == "stabilizing"
    assert moment_growth(pareto, 1.5).verdict == "growing"
    expo = rng.exponential(size=400_000)
    assert moment_growth(expo, 3.0).verdict == "stabilizing"
    with pytest.raises(DomainError):
        moment_growth(expo, -1.0)


def test_progeny_divergence(half, excursions):
    assert progeny_moment_divergence(0.5 * half.nu, excursions).verdict == "stabilizing"
    assert progeny_moment_divergence(1.5, excursions).verdict == "growing"


def test_sigma_laplace(excursions):
    r = sigma_laplace_bound(excursions)
    assert r.decreasing
    assert r.exponent > 0


def test_step_deviations(kernel_half):
    js = np.array([10, 20, 40, 80, 160])
    lo, hi = step_deviation_probabilities(kernel_half, js)
    assert np.all(np.diff(lo) < 0) and np.all(np.diff(hi) < 0)
    # exponential decay in j: log-probabilities fall at least linearly
    assert np.all(np.diff(np.log(lo)) / np.diff(js) < -0.01)
    assert np.all(np.diff(np.log(hi)) / np.diff(js) < -0.01)
    with pytest.raises(DomainError):
        step_deviation_probabilities(kernel_half, [kernel_half.N])
