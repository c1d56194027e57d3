import math

import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from scipy.special import jv

from spherecrits import _accel, legendre as L
from spherecrits.errors import DomainError, SingularArgumentError


def _mp_legendre(l, x, dps=60):
    # independent arbitrary-precision recurrence
    with mpmath.workdps(dps):
        x = mpmath.mpf(x)
        pm, p = mpmath.mpf(1), x
        if l == 0:
            return 1.0
        for k in range(2, l + 1):
            pm, p = p, ((2 * k - 1) * x * p - (k - 1) * pm) / k
        return float(p)


def test_eval_p_small_degrees():
    assert L.eval_p(0, 0.3) == 1.0
    assert L.eval_p(2, 0.5) == pytest.approx(-0.125, abs=1e-15)


def test_eval_p_high_degree_against_mp_oracle():
    assert abs(L.eval_p(100, 0.9) - _mp_legendre(100, 0.9)) <= 1e-12
    for l, x in [(500, 0.3), (2000, -0.77), (37, 0.999)]:
        assert abs(L.eval_p(l, x) - _mp_legendre(l, x)) <= 1e-12


def test_endpoints_exact():
    for l in range(0, 600, 7):
        assert L.eval_p(l, 1.0) == 1.0
        assert L.eval_p(l, -1.0) == (-1.0) ** l


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 400), st.floats(-1.0, 1.0))
def test_bounded_by_one(l, x):
    assert abs(L.eval_p(l, x)) <= 1.0 + 1e-12


def test_eval_p_domain():
    with pytest.raises(DomainError):
        L.eval_p(3, 1.0001)
    with pytest.raises(DomainError):
        L.eval_p(-1, 0.2)


def test_jet_linear_case():
    assert L.eval_jet(1, 0.2)[1] == pytest.approx(1.0, rel=1e-14)


def test_jet_second_derivative_symbolic():
    t = sympy.symbols("t")
    exact = float(sympy.diff(sympy.legendre(5, t), t, 2).subs(t, sympy.Rational(2, 5)))
    assert L.eval_jet(5, 0.4)[2] == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("l", [2, 7, 12, 25])
def test_jet_all_orders_symbolic(l):
    t = sympy.symbols("t")
    poly = sympy.legendre(l, t)
    for x in (-0.93, -0.2, 0.05, 0.61):
        jet = L.eval_jet(l, x)
        for k in range(5):
            exact = float(sympy.diff(poly, t, k).subs(t, sympy.Float(x, 40)))
            assert jet[k] == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_fourth_derivative_finite_difference():
    x0, h = math.cos(0.7), 1e-3
    # fourth-order accurate seven-point stencil for the fourth derivative
    c = [-1 / 6, 2, -13 / 2, 28 / 3, -13 / 2, 2, -1 / 6]
    fd = sum(ci * L.eval_p(50, x0 + (i - 3) * h) for i, ci in enumerate(c)) / h ** 4
    assert L.eval_jet(50, x0)[4] == pytest.approx(fd, rel=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200))
def test_jet_matches_finite_differences_on_grid(l):
    x = np.linspace(-0.99, 0.99, 1000)
    h = 1e-3 / l
    J0 = L.jet_values(l, x)
    Js = [L.jet_values(l, x + s * h) for s in (-2, -1, 1, 2)]
    for k in range(1, min(l, 4) + 1):
        fd = (Js[0][k - 1] - 8 * Js[1][k - 1] + 8 * Js[2][k - 1] - Js[3][k - 1]) / (12 * h)
        scale = max(float(np.max(np.abs(J0[k]))), 1.0)
        err = np.abs(fd - J0[k]) / np.maximum(np.abs(J0[k]), scale)
        assert float(np.max(err)) <= 1e-6
    # orders above the degree vanish identically
    assert np.all(J0[l + 1:] == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.floats(-0.995, 0.995))
def test_recurrence_jet_matches_ladder(l, x):
    a = L.jet_values(l, x)
    b = L.jet_ladder(l, x, 4)
    # sup of |P^(k)| on [-1, 1] is attained at x = 1
    sup = np.array([max(L.endpoint_derivative(l, k), 1.0) for k in range(5)])
    assert np.all(np.abs(a - b) <= 1e-10 * sup)


def test_edge_tolerance_and_endpoint_closed_forms():
    with pytest.raises(SingularArgumentError):
        L.eval_jet(4, 1 - 1e-8)
    with pytest.raises(SingularArgumentError):
        L.eval_jet(4, -1.0)
    for l in (1, 5, 40):
        assert L.endpoint_derivative(l, 1) == l * (l + 1) / 2
        lad = L.jet_ladder(l, np.array([1.0, -1.0]), 4)
        for k in range(5):
            assert lad[k, 0] == pytest.approx(L.endpoint_derivative(l, k, 1), rel=1e-12)
            assert lad[k, 1] == pytest.approx(L.endpoint_derivative(l, k, -1), rel=1e-12)


def test_bessel_values():
    assert L.bessel_j(0, 1e-300) == pytest.approx(1.0)
    assert L.bessel_j(0, 0.0) == 1.0
    assert L.bessel_j(1, 1.0) == pytest.approx(0.4400505857, abs=1e-10)
    assert L.bessel_j(1, 1.0) == pytest.approx(jv(1, 1.0), abs=1e-15)
    assert abs(L.bessel_j(0, 50.0, "asymptotic") - L.bessel_j(0, 50.0, "series")) <= 1e-8


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([0, 1, 2]), st.floats(1e-3, 300.0))
def test_bessel_against_scipy(n, x):
    assert abs(L.bessel_j(n, x) - jv(n, x)) <= 1e-12


def test_bessel_domain():
    with pytest.raises(DomainError):
        L.bessel_j(3, 1.0)
    with pytest.raises(DomainError):
        L.bessel_j(0, -1.0)


def test_hilb_term_constants_and_phase():
    r = math.sqrt(2 / math.pi)
    assert L.hilb_h(0, 0) == pytest.approx(r, rel=1e-15)
    assert L.hilb_h(0, 1) == pytest.approx(-r / 8, rel=1e-15)
    assert L.hilb_h(1, 0) == pytest.approx(r, rel=1e-15)
    for n, l, u, phi in [(0, 10, 0, 0.3), (1, 77, 1, 1.2), (2, 400, 3, 0.01)]:
        t = L.hilb_term(n, u, l, phi)
        assert t.psi == (l + u + 0.5) * phi - n * math.pi / 2 - math.pi / 4


def test_hilb_smoke_and_domain():
    assert math.isfinite(L.hilb_p(10, 1, 0.8, 3))
    with pytest.raises(DomainError):
        L.hilb_p(10, 0, 1.7, 1)
    with pytest.raises(DomainError):
        L.hilb_p(10, 0, 0.0, 1)
    with pytest.raises(DomainError):
        L.hilb_p(10, 0, 0.5, 4)


def test_hilb_two_term_bound_fit_then_verify():
    def ratio(p):
        return abs(L.hilb_p(100, 0, p, 2) - L.eval_p(100, math.cos(p))) / (p * p / 100 ** 2)

    train = np.linspace(0.1, 1.5, 15)
    c = max(ratio(p) for p in train)
    fresh = [0.5] + list(train[:-1] + 0.05)
    assert max(ratio(p) for p in fresh) <= c


def test_hilb_doubling_one_term():
    # errors compared as maxima over one oscillation period: pointwise values
    # are dominated by where the phase sits
    e64 = L.hilb_envelope(64, 0.3, 1)
    e128 = L.hilb_envelope(128, 0.3, 1)
    assert 0.5 / 1.5 <= e128 / e64 <= 0.5 * 1.5


@pytest.mark.parametrize("phi", [0.3, 0.6, 1.2])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_hilb_order_of_convergence(phi, m):
    for l in (50, 100):
        r = L.hilb_envelope(l, phi, m) / L.hilb_envelope(2 * l, phi, m)
        assert r >= 2 ** m / 1.5


def test_asympt_p1_band_at_200():
    K, worst, ok = L.p1_band_check(200, np.linspace(0.15, 1.45, 8), np.linspace(0.2, 1.5, 8) + 0.03)
    assert K > 0 and ok and worst <= 1.5


def test_asympt_at_equator_finite():
    vals = L.asympt_derivatives(100, math.pi / 2)
    assert all(math.isfinite(v) for v in vals)


def test_asympt_fourth_derivative_improves_with_degree():
    errs = [L.asympt_envelope(l, 0.4)[3] for l in (64, 128, 256)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("phi", [0.5, 1.0])
def test_asympt_relative_error_order_one_over_l(phi):
    for l in (50, 100, 200):
        r = L.asympt_envelope(l, phi) / L.asympt_envelope(2 * l, phi)
        assert np.all(r >= 1.5)


def test_asympt_domain():
    with pytest.raises(DomainError):
        L.asympt_derivatives(100, 0.05)
    with pytest.raises(DomainError):
        L.asympt_derivatives(100, 1.6)


def test_backends_identical():
    x = np.linspace(-1.0, 1.0, 501)
    for l in (0, 1, 2, 9, 300):
        with _accel.use_backend("numba"):
            a, la = L.p_block(l, x, 3), L.jet_ladder(l, x, 4)
        with _accel.use_backend("numpy"):
            b, lb = L.p_block(l, x, 3), L.jet_ladder(l, x, 4)
        assert np.array_equal(a, b) and np.array_equal(la, lb)
