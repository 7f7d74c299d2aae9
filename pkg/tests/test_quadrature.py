import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tracefit.degree import Geometric, NegBinomial
from tracefit.quadrature import (
    IntegrationSpec,
    QuadratureError,
    integrate_semi_infinite,
    sum_series,
)


@pytest.mark.parametrize("f,rate,want", [
    (lambda a: 4.5 * np.exp(-4.5 * a), 4.5, 1.0),
    (lambda a: a * np.exp(-a), 1.0, 1.0),
    (lambda a: np.exp(-a) * 4.5 * np.exp(-4.5 * a), 4.5, 4.5 / 5.5),
])
def test_reference_integrals(f, rate, want):
    assert abs(integrate_semi_infinite(f, IntegrationSpec(rate)) - want) < 1e-9


@settings(max_examples=40, deadline=None)
@given(b=st.floats(0.05, 20), c=st.floats(0.0, 5), frac=st.floats(0.3, 1.0))
def test_against_scipy_quad(b, c, frac):
    # the rate hint may undershoot the true decay rate b, never exceed it
    def f(a):
        return (1 + c * a + a ** 2 / (1 + a)) * np.exp(-b * a)

    want, _ = integrate.quad(f, 0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=500)
    got = integrate_semi_infinite(f, IntegrationSpec(frac * b, abs_tol=1e-10))
    assert abs(got - want) < 1e-8 * max(1.0, want)


def test_vector_integrand():
    f = lambda a: np.column_stack([np.exp(-a), a * np.exp(-2 * a), np.exp(-3 * a) * a ** 2])
    got = integrate_semi_infinite(f, IntegrationSpec(1.0))
    np.testing.assert_allclose(got, [1.0, 0.25, 2 / 27], atol=1e-9)


def test_linearity():
    spec = IntegrationSpec(1.3, abs_tol=1e-10)
    f = lambda a: np.exp(-1.3 * a) * np.cos(a)
    g = lambda a: a ** 2 * np.exp(-2 * a)
    lhs = integrate_semi_infinite(lambda a: f(a) + g(a), spec)
    rhs = integrate_semi_infinite(f, spec) + integrate_semi_infinite(g, spec)
    assert abs(lhs - rhs) <= 2 * spec.abs_tol


def test_tolerance_monotone():
    f = lambda a: np.exp(-0.7 * a) * (1 + np.sin(3 * a))
    prev = None
    for tol in [1e-4, 5e-5, 2.5e-5, 1e-6, 1e-8, 1e-10]:
        v = integrate_semi_infinite(f, IntegrationSpec(0.7, abs_tol=tol))
        if prev is not None:
            assert abs(v - prev[0]) <= prev[1] + 1e-15
        prev = (v, tol)


def test_deterministic():
    f = lambda a: np.exp(-a) * np.abs(np.sin(5 * a))
    spec = IntegrationSpec(1.0, abs_tol=1e-11)
    assert integrate_semi_infinite(f, spec) == integrate_semi_infinite(f, spec)


def test_failure_carries_estimate():
    f = lambda a: np.exp(-a) * np.sin(40 * a) ** 2
    with pytest.raises(QuadratureError) as info:
        integrate_semi_infinite(f, IntegrationSpec(1.0, abs_tol=1e-14, max_subdivisions=4))
    assert info.value.estimate is not None and info.value.error > 0


def test_spec_validation():
    with pytest.raises(ValueError):
        IntegrationSpec(0.0)
    with pytest.raises(ValueError):
        IntegrationSpec(1.0, abs_tol=0.0)


def test_series():
    assert abs(sum_series(lambda k: 2.0 ** -k, 0, 1e-12) - 2.0) < 1e-11
    geo = Geometric(1.0)
    assert sum_series(geo.pmf, 0) == pytest.approx(1.0, abs=1e-12)
    nb = NegBinomial(0.16, 4.5)
    assert abs(sum_series(lambda k: k * nb.pmf(k), 0, 1e-12) - 4.5) < 1e-6


def test_series_no_decay():
    with pytest.raises(QuadratureError):
        sum_series(lambda k: np.ones(len(k)), 0, max_terms=5000)
