import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from cookiewalk.bessel import (
    G_AT_ZERO, G_func, G_prime, F_eta, F_eta_ode_residual, F_eta_prime_identity_residual,
    F_eta_zero, K, PhiLambda, bessel_k, choose_method, phi, self_test,
)
from cookiewalk.errors import DomainError

# frozen reference values (Abramowitz and Stegun tables)
K0_1 = 0.42102443824070833
K1_1 = 0.6019072301972346
KHALF_1 = 0.46106850444789454


def test_frozen_values():
    assert bessel_k(0, 1).value == pytest.approx(K0_1, rel=1e-12)
    assert bessel_k(1, 1).value == pytest.approx(K1_1, rel=1e-12)
    assert bessel_k(0.5, 1).value == pytest.approx(KHALF_1, rel=1e-13)


def test_methods_agree():
    for eta in (0.0, 0.25, 0.5, 0.75, 1.0):
        for x in (0.3, 1.0, 1.9):
            assert bessel_k(eta, x, "integral").value == pytest.approx(special.kv(eta, x), rel=1e-12)
    # the series is used at integer orders only for tiny x
    for eta in (0.25, 0.5, 0.75):
        for x in (0.3, 1.0, 1.9):
            assert bessel_k(eta, x, "series").value == pytest.approx(special.kv(eta, x), rel=1e-12)
    for eta in (0.0, 1.0):
        assert bessel_k(eta, 0.04, "series").value == pytest.approx(special.kv(eta, 0.04), rel=1e-9)


def test_asymptotic_branch():
    for eta in (0.1, 0.75, 1.0):
        for x in (17.0, 30.0, 80.0):
            assert bessel_k(eta, x, "asymptotic").value == pytest.approx(special.kv(eta, x), rel=1e-12)


@given(st.floats(-0.5, 1.5), st.floats(0.01, 60))
@settings(max_examples=200, deadline=None)
def test_against_reference(eta, x):
    ev = bessel_k(eta, x)
    assert ev.value == pytest.approx(special.kv(eta, x), rel=1e-8)
    assert ev.method == choose_method(eta, x)


@given(st.floats(0, 1.5), st.floats(0.01, 30))
@settings(max_examples=60, deadline=None)
def test_symmetric_order(eta, x):
    if eta <= 0.5:
        assert bessel_k(-eta, x).value == pytest.approx(bessel_k(eta, x).value, rel=1e-9)


def test_domain():
    with pytest.raises(DomainError):
        bessel_k(2.0, 1.0)
    with pytest.raises(DomainError):
        bessel_k(0.5, 0.0)
    with pytest.raises(DomainError):
        F_eta(0.5, -1.0)


def test_F_half_closed_form():
    x = np.linspace(0.0, 10, 41)
    assert np.abs(F_eta(0.5, x) - math.sqrt(math.pi / 2) * np.exp(-x)).max() <= 1e-10


def test_F_at_zero():
    for eta in (0.25, 0.75, 1.0):
        assert F_eta(eta, 0.0) == pytest.approx(2 ** (eta - 1) * math.gamma(eta))
        assert F_eta(eta, 1e-6) == pytest.approx(F_eta_zero(eta), rel=1e-3)
    assert F_eta_zero(0.0) == math.inf


@pytest.mark.parametrize("eta", [0.25, 0.6, 0.75, 0.95])
def test_identities(eta):
    for x in (0.1, 1.0, 5.0, 15.0):
        assert F_eta_prime_identity_residual(eta, x) <= 1e-6
        assert F_eta_ode_residual(eta, x) <= 1e-6


def test_F_decreasing():
    x = np.linspace(0, 20, 300)
    for eta in (0.55, 0.75, 1.0):
        assert np.all(np.diff(F_eta(eta, x)) < 0)


def test_phi():
    p = PhiLambda(0.1, 0.75)
    assert p(0.0) == pytest.approx(p.at_zero)
    assert phi(0.1, 0.75, 0.0, derivative=1) == 0.0
    x = np.linspace(0.05, 30, 100)
    assert p.ode_residual(x).max() <= 1e-6
    assert np.all(p.d1(x) < 0)
    h = 1e-5
    assert p.d1(3.0) == pytest.approx((p(3 + h) - p(3 - h)) / (2 * h), rel=1e-6)
    with pytest.raises(DomainError):
        PhiLambda(0.0, 0.75)
    with pytest.raises(DomainError):
        PhiLambda(0.1, 0.4)


def test_G():
    assert G_func(0.0) == G_AT_ZERO
    assert G_func(1e-5) == pytest.approx(G_AT_ZERO, abs=1e-4)
    x = np.linspace(0.1, 10, 50)
    h = 1e-6
    fd = (G_func(x + h) - G_func(x - h)) / (2 * h)
    assert np.abs(fd - G_prime(x)).max() < 1e-6
    # decreasing past 1, increasing before; bounded
    assert np.all(G_prime(x[x > 1]) < 0) and np.all(G_prime(x[x < 1]) > 0)
    big = np.geomspace(10, 200, 20)
    assert np.all(np.abs(G_func(big) * big) < 10)


def test_vectorized_K():
    v = K([0.5, 1.0], [1.0, 1.0])
    assert v.shape == (2,)
    assert v[1] == pytest.approx(K1_1)


def test_self_test():
    r = self_test()
    assert r["ok"]
    assert r["F_half_closed_form"] <= 1e-10
