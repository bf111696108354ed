import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from cookiewalk.branching import MigrationSampler, absorbed_trajectory, simulate_excursions
from cookiewalk.env import CookieConfig
from cookiewalk.errors import DomainError, TruncationTooSevere
from cookiewalk.genfun import GenFnContext
from cookiewalk.kernel import (
    A_moments, build_kernel, conditional_law_given_survival, conditional_moments,
    expected_sigma, expected_sigma_all, invariance_residual, kernel_moment_corrections,
    law_of_A, occupation_identity, stationary_law, survival_probabilities, visit_generating,
)
from cookiewalk.stats import fit_tail_curve


def test_law_of_A_basics(half):
    a0 = law_of_A(half, 0)
    assert a0.probs[0] == 0.75
    last = law_of_A(half, 2)
    # E[A_{M-1}] = M - 1 - alpha
    assert abs(last.mean() - 1.5) <= 1e-12
    assert abs(last.total() - 1) <= 1e-14


@pytest.mark.parametrize("j", [0, 1, 2])
def test_law_of_A_pgf(half, j):
    law = law_of_A(half, j)
    s = 1.5
    # geometric tails: 300 terms leave far less than 1e-10 at s = 1.5
    direct = math.fsum(law.probs[:300] * s ** np.arange(300))
    assert direct == pytest.approx(GenFnContext(half).pgf_A(j, s), abs=1e-10)


def test_A_moments_match_law(half):
    for j in range(3):
        law = law_of_A(half, j)
        k = np.arange(len(law.probs))
        m1, m2 = A_moments(half.p_array, j)
        assert m1 == pytest.approx(law.mean(), abs=1e-12)
        assert m2 == pytest.approx(law.probs @ k**2, rel=1e-10)


def test_rows(kernel_half, half):
    k = kernel_half
    total = k.P.sum(axis=1) + k.tail
    assert np.abs(total - 1).max() < 1e-13
    for i in range(half.M):
        assert np.allclose(k.P[i], law_of_A(half, i, k.N).probs, atol=1e-16)
    assert k.row_mean_residuals().max() < 1e-9


def test_row_shift_convolution(kernel_half, half):
    g = 0.5 ** np.arange(1, kernel_half.N + 2)
    for i in range(half.M - 1, 300, 7):
        conv = np.convolve(kernel_half.P[i], g)[: kernel_half.N + 1]
        assert np.abs(conv - kernel_half.P[i + 1]).max() < 1e-12


def test_chapman_kolmogorov(half, kernel_small):
    P = kernel_small.P
    two = P @ P
    # composing single steps state by state
    for x in range(0, 51, 10):
        comp = sum(P[x, y] * P[y] for y in range(kernel_small.N + 1))
        assert np.abs(comp[:51] - two[x, :51]).max() < 1e-10


def test_empirical_row_chi_square(half, kernel_half):
    z = MigrationSampler(half, 21).step(10, 10**7)
    row = kernel_half.P[10]
    K = 40
    obs = np.bincount(z, minlength=K + 1)[: K + 1].astype(float)
    obs = np.append(obs, (z > K).sum())
    exp = np.append(row[: K + 1], row[K + 1:].sum() + kernel_half.tail[10]) * len(z)
    keep = exp >= 5
    chi = ((obs[keep] - exp[keep]) ** 2 / exp[keep]).sum()
    assert sps.chi2.sf(chi, keep.sum() - 1) > 1e-3


def test_survival_curve(kernel_half):
    c = survival_probabilities(kernel_half, 1, 500)
    assert c.P[0] == 1.0
    assert np.all(np.diff(c.P) <= 0)
    fit = fit_tail_curve(c.n, c.P, (50, 500))
    assert abs(fit.exponent - 1.5) < 0.1
    assert c.err.max() < 1e-6


def test_survival_monotone_in_start(kernel_small):
    curves = [survival_probabilities(kernel_small, x, 60).P for x in (1, 2, 5, 20)]
    for a, b in zip(curves, curves[1:]):
        assert np.all(b >= a - 1e-15)


def test_survival_tolerance(kernel_small):
    with pytest.raises(TruncationTooSevere):
        survival_probabilities(kernel_small, 1, 400, tol=1e-30)


def test_expected_sigma_sum_and_mc(half, kernel_half):
    E1, err = expected_sigma(kernel_half, 1)
    L = 4000
    c = survival_probabilities(kernel_half, 1, L)
    partial = c.P.sum()
    # P(sigma > n) ~ c n^{-3/2}: the remaining sum is about 2 L P_L
    tail = 2 * L * c.P[-1]
    assert partial <= E1 + err
    assert abs(E1 - (partial + tail)) <= err + 0.1 * tail + c.err.sum()
    E0, err0 = expected_sigma(kernel_half, 0)
    b = simulate_excursions(half, 10**6, 22)
    m, se = b.mean_sigma()
    assert abs(m - E0) <= 3 * se + err0


def test_expected_sigma_increasing(kernel_small):
    e = expected_sigma_all(kernel_small)
    assert np.all(np.diff(e[1:200]) > 0)


def test_expected_sigma_needs_transience():
    k = build_kernel(CookieConfig.from_strengths([0.5]), 64)
    with pytest.raises(DomainError):
        expected_sigma(k, 0)


def test_stationary_law(kernel_half):
    pi = stationary_law(kernel_half)
    assert invariance_residual(kernel_half, pi) <= 1e-10
    fit = fit_tail_curve(np.arange(len(pi.probs)), pi.probs, (50, 2000), kind="pmf")
    assert abs(fit.exponent - 0.5) < 0.1


def test_stationary_power_agrees(kernel_small):
    a = stationary_law(kernel_small).probs
    b = stationary_law(kernel_small, method="power", tol=1e-13).probs
    assert 0.5 * np.abs(a - b).sum() < 1e-9


def test_occupation_identity(kernel_small, kernel_half):
    f = lambda z: np.minimum(z, 10)
    lhs, rhs, bound = occupation_identity(kernel_small, f)
    assert abs(lhs - rhs) <= bound
    lhs2, rhs2, bound2 = occupation_identity(kernel_half, f)
    assert abs(lhs2 - rhs2) <= bound2
    # a larger truncation tightens the certificate
    assert bound2 < bound


def test_conditional_law(half):
    k = build_kernel(half, 2048)
    law0 = conditional_law_given_survival(k, 3, 0)
    assert law0.probs[3] == 1.0
    law = conditional_law_given_survival(k, 1, 100)
    F = np.cumsum(law.probs)
    z = np.arange(len(F))
    assert np.abs(F - (1 - np.exp(-z / 100))).max() < 0.05
    assert 0.8 < law.mean() / 100 < 1.2
    with pytest.raises(TruncationTooSevere):
        conditional_law_given_survival(build_kernel(half, 256), 1, 300)


def test_visit_generating(half):
    cfg = CookieConfig.uniform(4, "7/10")     # alpha = 0.6, two k values
    k = build_kernel(cfg, 1024)
    assert visit_generating(k, 1, 2, 0.0)[0] == 0.0
    for kk in (1, 2):
        g1, e1 = visit_generating(k, kk, 2, 1.0, tol=1e-2)
        assert g1 <= 1 / 0.7 ** (kk + 1) + e1
    # Monte Carlo: E[sum_i 1{Z~_i = k} s^{i+1}]
    s = 0.8
    g, err = visit_generating(k, 1, 2, s)
    sampler = MigrationSampler(cfg, 23)
    vals = []
    w = s ** np.arange(1, 152)
    for _ in range(20_000):
        p = absorbed_trajectory(2, sampler, 150).path
        vals.append(((p == 1) * w).sum())
    vals = np.array(vals)
    assert abs(vals.mean() - g) <= 3 * vals.std() / np.sqrt(len(vals)) + err + s**151 * 10
    with pytest.raises(DomainError):
        visit_generating(build_kernel(CookieConfig.uniform(2, "4/5"), 64), 1, 1, 0.5)


def test_moment_corrections(half, kernel_half):
    mc = conditional_moments(half)
    assert all(mc.f1(x) == 0 for x in range(half.M - 1, 40))
    var = law_of_A(half, 2)
    k_ = np.arange(len(var.probs))
    v = var.probs @ k_**2 - var.mean() ** 2
    assert mc.var_A == pytest.approx(v, rel=1e-9)
    # centered second moment from k >= M-1: 2k + alpha^2 + Var(A_{M-1}) - 2(M-1)
    for x in (2, 5, 30):
        assert 2 * x + 2 * mc.f2(x) == pytest.approx(2 * x + half.alpha**2 + mc.var_A - 2 * (half.M - 1))
    f1, f2 = kernel_moment_corrections(kernel_half, 30)
    assert np.allclose(f1, [mc.f1(x) for x in range(31)], atol=1e-9)
    assert np.allclose(f2, [mc.f2(x) for x in range(31)], atol=1e-9)
    one = conditional_moments(CookieConfig.from_strengths([0.5]))
    assert one.f1(0) == 0.0


def test_build_kernel_needs_room(half):
    with pytest.raises(DomainError):
        build_kernel(half, 4)


@given(st.lists(st.fractions(min_value=0.5, max_value=0.95), min_size=1, max_size=4))
@settings(max_examples=20, deadline=None)
def test_rows_are_laws(ps):
    cfg = CookieConfig.from_strengths(ps)
    k = build_kernel(cfg, max(64, 2 * cfg.M))
    assert np.abs(k.P.sum(axis=1) + k.tail - 1).max() < 1e-12
    assert np.all(k.P >= 0)
    assert k.row_mean_residuals().max() < 1e-9
