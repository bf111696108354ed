import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cookiewalk.errors import DomainError, InsufficientTail
from cookiewalk.stats import (
    fit_tail, fit_tail_curve, hill, ks_critical_value, ks_two_sample, limit_law_comparison,
    mittag_leffler_moment, sample_mittag_leffler, sample_stable,
)


def pareto(rho, n, seed):
    return np.random.default_rng(seed).pareto(rho, n) + 1.0


def test_pareto_exponent():
    r = fit_tail(pareto(1.5, 200_000, 1), window=(5, 500))
    assert r.exponent == pytest.approx(1.5, abs=0.05)
    assert r.ci[0] <= 1.5 <= r.ci[1]
    assert not r.curvature and r.power_law
    assert r.r2 > 0.99


def test_scale_equivariance():
    x = pareto(0.75, 100_000, 2)
    a = fit_tail(x, window=(10, 1000), seed=3)
    b = fit_tail(7.0 * x, window=(70, 7000), seed=3)
    assert a.exponent == pytest.approx(b.exponent, abs=1e-9)


def test_curvature_flag():
    r = fit_tail(np.random.default_rng(4).exponential(size=100_000), window=(0.5, 10))
    assert r.curvature


def test_default_window():
    x = pareto(1.0, 50_000, 5)
    r = fit_tail(x)
    assert r.window[0] == pytest.approx(10 * x.min())
    assert r.window[1] == pytest.approx(np.quantile(x, 0.999))


def test_insufficient_tail():
    with pytest.raises(InsufficientTail):
        fit_tail(np.arange(1, 10), window=(1, 9))
    with pytest.raises(InsufficientTail):
        fit_tail(-np.ones(100))
    with pytest.raises(DomainError):
        fit_tail(pareto(1, 100, 0), method="nope")
    with pytest.raises(DomainError):
        fit_tail(pareto(1, 100, 0), curve=([1], [1]))


def test_coverage():
    hits = 0
    for s in range(60):
        r = fit_tail(pareto(1.0, 20_000, 100 + s), window=(3, 300), bootstrap=150, seed=s)
        hits += r.ci[0] <= 1.0 <= r.ci[1]
    # nominal 95%; binomial lower bound at 60 trials
    assert hits >= 51


def test_hill():
    r = hill(pareto(2.0, 100_000, 6), 5.0)
    assert r.exponent == pytest.approx(2.0, abs=0.1)
    assert r.method == "Hill"
    r2 = fit_tail(pareto(2.0, 100_000, 6), window=(5, 100), method="Hill")
    assert r2.exponent == r.exponent


def test_curve_fits():
    x = np.arange(1, 5001, dtype=float)
    r = fit_tail_curve(x, 3 * x**-1.5, (10, 5000))
    assert r.exponent == pytest.approx(1.5, abs=1e-10)
    pmf = fit_tail_curve(x, x**-1.5, (10, 5000), kind="pmf")
    assert pmf.exponent == pytest.approx(0.5, abs=1e-10)
    lc = fit_tail_curve(x, np.log(x) / x**2, (10, 5000), kind="pmf", log_correct=True)
    assert lc.exponent == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DomainError):
        fit_tail_curve(x, x, kind="cdf")


@given(st.floats(0.3, 3.0), st.floats(0.1, 100.0))
@settings(max_examples=30)
def test_curve_scale_invariant(rho, c):
    x = np.geomspace(1, 1e4, 200)
    assert fit_tail_curve(x, c * x**-rho, (10, 1e4)).exponent == pytest.approx(rho, abs=1e-8)


def test_ks():
    a = np.random.default_rng(7).normal(size=5000)
    b = np.random.default_rng(8).normal(size=5000)
    r = ks_two_sample(a, b)
    assert r.statistic < ks_critical_value(5000, 5000, 0.001)
    assert r.pvalue > 0.001
    assert ks_two_sample(a, a + 1).pvalue < 1e-10
    assert ks_critical_value(100, 100, 0.05) == pytest.approx(1.358 * math.sqrt(2 / 100), rel=1e-3)
    with pytest.raises(DomainError):
        ks_two_sample([], a)


@pytest.mark.parametrize("nu", [0.5, 0.75, 0.9])
def test_stable_laplace(nu):
    s = sample_stable(nu, 400_000, 9)
    for t in (0.5, 1.0, 2.0):
        v = np.exp(-t * s)
        assert v.mean() == pytest.approx(math.exp(-t**nu), abs=4 * v.std() / math.sqrt(len(v)))


def test_stable_half_is_levy():
    # nu = 1/2: E e^{-tS} = e^{-sqrt t} is the Levy law of 1/(2 G^2), G standard normal
    s = sample_stable(0.5, 100_000, 10)
    ref = 1 / (2 * np.random.default_rng(11).normal(size=100_000) ** 2)
    assert ks_two_sample(s, ref).pvalue > 1e-3


@pytest.mark.parametrize("nu", [0.6, 0.75])
def test_mittag_leffler_moments(nu):
    m = sample_mittag_leffler(nu, 400_000, 12)
    for k in (1, 2):
        v = m**k
        assert v.mean() == pytest.approx(mittag_leffler_moment(nu, k), abs=4 * v.std() / math.sqrt(len(v)))


def test_samplers_reject_bad_nu():
    for nu in (0.0, 1.0, 0.9995, 1.2):
        with pytest.raises(DomainError):
            sample_stable(nu, 10, 0)


def test_sampler_reproducible():
    assert np.array_equal(sample_stable(0.7, 100, 5), sample_stable(0.7, 100, 5))
    assert not np.array_equal(sample_stable(0.7, 100, 5), sample_stable(0.7, 100, 6))


def test_limit_law(half):
    r = limit_law_comparison(half, [2**10, 2**14], 400, 13, reference_size=50_000)
    crit = ks_critical_value(400, 50_000, 0.001)
    assert r.ks[-1] <= crit
    assert r.medians[1] > r.medians[0]
    with pytest.raises(DomainError):
        limit_law_comparison(pytest.importorskip("cookiewalk.env").CookieConfig.uniform(3, "5/6"), [10], 10, 0)
