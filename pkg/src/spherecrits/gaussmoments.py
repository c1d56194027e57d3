"""Gaussian moment constants and the variance law built from them.

Y = (Y1, Y2, Y3) is centred Gaussian with covariance U1 and

    I_r = E[ |Y1 Y3 - Y2^2| (Y1 - 3 Y3)^r ],   r = 0, 2, 4.

Closed forms live next to an independent quadrature oracle
(``numeric_moment``) that never touches them.  Interval versions use the
densities p_r, whose integrals over R are I_0, I_2/8 and I_4/64.
"""

import math
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, DomainError

SQRT3 = math.sqrt(3.0)
SQRT_2_PI = math.sqrt(2.0 / math.pi)
TRUNC = 12.0

I0 = 4.0 / SQRT3
I2 = 160.0 / SQRT3
I4 = 44800.0 / (3.0 * SQRT3)

# Taylor weights multiplying lambda^2 * A_{index} in the variance expansion
TAYLOR_WEIGHT = {
    (): 1.0,
    (3,): 1.0,
    (3, 3): 0.5,
    (7, 7): 0.5,
    (3, 7, 7): 0.5,
    (7, 7, 7, 7): 1.0 / 24.0,
}


class MomentSet(NamedTuple):
    I0: float
    I2: float
    I4: float
    q0: float
    interval: Tuple[float, float]
    II0: float
    II2: float
    II4: float


class QDerivatives(NamedTuple):
    d3: float
    d77: float
    d33: float
    d377: float
    d7777: float


class VarianceLaw(NamedTuple):
    cubic_coeff: float
    log_coeff: float
    interval: Optional[Tuple[float, float]]
    flavour: str = "c"


def _as_interval(interval):
    if interval is None:
        return (-math.inf, math.inf)
    a, b = float(interval[0]), float(interval[1])
    if math.isnan(a) or math.isnan(b):
        raise DomainError("interval bounds must not be NaN")
    return (a, b)


def _is_full_line(iv):
    return iv[0] == -math.inf and iv[1] == math.inf


# ---------------------------------------------------------------- densities

def _p0(t):
    t2 = t * t
    return SQRT_2_PI * (2 * np.exp(-t2) + t2 - 1) * np.exp(-t2 / 2)


def _p2(t):
    t2 = t * t
    return SQRT_2_PI * (-4 + t2 + t2 * t2 + 2 * (4 + 3 * t2) * np.exp(-t2)) * np.exp(-t2 / 2)


def _p4(t):
    t2 = t * t
    t4 = t2 * t2
    return SQRT_2_PI * ((72 + 96 * t2 + 38 * t4) * np.exp(-t2)
                        - 36 - 12 * t2 + 11 * t4 + t4 * t2) * np.exp(-t2 / 2)


_POLY = lambda t2: 1 + 17 * t2 - 11 * t2 * t2 + t2 * t2 * t2  # noqa: E731


def _mu_c(t):
    t2 = t * t
    return SQRT_2_PI / (8 * math.pi) * ((-2 - 36 * t2 + 38 * t2 * t2) * np.exp(-t2)
                                       + _POLY(t2)) * np.exp(-t2 / 2)


def _mu_e(t):
    t2 = t * t
    return SQRT_2_PI / (8 * math.pi) * ((-1 - 18 * t2 + 19 * t2 * t2) * np.exp(-t2)
                                       + _POLY(t2)) * np.exp(-t2 / 2)


def _mu_s(t):
    t2 = t * t
    return SQRT_2_PI / (8 * math.pi) * (-1 - 18 * t2 + 19 * t2 * t2) * np.exp(-1.5 * t2)


_DENSITIES = {"p0": _p0, "p2": _p2, "p4": _p4, "mu_c": _mu_c, "mu_e": _mu_e, "mu_s": _mu_s}
DENSITY_KINDS = tuple(_DENSITIES)


def density(kind, t):
    """Evaluate one of p0, p2, p4, mu_c, mu_e, mu_s at ``t`` (scalar or array)."""
    try:
        f = _DENSITIES[kind]
    except KeyError:
        raise DomainError(f"unknown density {kind!r}; expected one of {DENSITY_KINDS}") from None
    x = np.asarray(t, dtype=float)
    out = f(x)
    return float(out) if out.ndim == 0 else out


def integrate_density(kind, interval=None, epsabs=1e-13, epsrel=1e-12):
    """Integral of a density over an interval, truncated to [-12, 12]."""
    a, b = _as_interval(interval)
    lo, hi = max(a, -TRUNC), min(b, TRUNC)
    if hi <= lo:
        return 0.0
    f = _DENSITIES[kind]
    pts = [p for p in (-3.0, -1.0, 0.0, 1.0, 3.0) if lo < p < hi]
    val, err = integrate.quad(f, lo, hi, points=pts or None, epsabs=epsabs, epsrel=epsrel, limit=200)
    if err > 1e-9 * max(1.0, abs(val)):
        raise ConvergenceError(f"density quadrature for {kind} reached only {err:.2e}")
    return val


# ---------------------------------------------------------------- moments

def closed_moments(interval=None):
    """Closed-form I_r plus the interval integrals of p_r.

    For the full line the interval integrals are I_0, I_2/8, I_4/64; for a
    proper interval they come from quadrature of the p_r densities.
    """
    iv = _as_interval(interval)
    if _is_full_line(iv):
        ii = (I0, I2 / 8.0, I4 / 64.0)
    else:
        ii = tuple(integrate_density(k, iv) for k in ("p0", "p2", "p4"))
    return MomentSet(I0, I2, I4, I0 * I0, iv, *ii)


def _angular_average(r, v, t, n=16):
    # E over theta of (4 sqrt(v) cos(theta) - t)^r; uniform rule is exact here
    th = 2 * math.pi * np.arange(n) / n
    return float(np.mean((4 * math.sqrt(v) * np.cos(th) - t) ** r))


def _inner(r, t, tol):
    # E[|t^2/4 - v| g_r(v, t)] with v = R^2 ~ Exp(1/2); split at the kink
    kink = t * t / 4
    f = lambda v: abs(kink - v) * _angular_average(r, v, t) * 0.5 * math.exp(-v / 2)  # noqa: E731
    total, err = 0.0, 0.0
    if kink > 0:
        val, e = integrate.quad(f, 0.0, kink, epsabs=tol, epsrel=tol, limit=200)
        total, err = total + val, err + e
    val, e = integrate.quad(f, kink, math.inf, epsabs=tol, epsrel=tol, limit=200)
    return total + val, err + e


def numeric_moment(r, tol=1e-11):
    """Quadrature oracle for I_r, independent of the closed forms.

    With W = Y1 + Y3 ~ N(0, 8), xi = (Y1 - Y3)/2 and Y2 standard normal,
    |Y1 Y3 - Y2^2| = |W^2/4 - (xi^2 + Y2^2)| and Y1 - 3 Y3 = 4 xi - W.
    The inner expectation over (xi, Y2) runs in polar coordinates, split at
    xi^2 + Y2^2 = W^2/4; the outer one is a Gaussian integral in W.
    """
    if r not in (0, 2, 4):
        raise DomainError("r must be 0, 2 or 4")
    errs = []

    def outer(t):
        w = math.exp(-t * t / 16) / (4 * math.sqrt(math.pi))
        val, e = _inner(r, t, tol)
        errs.append(e * w)
        return val * w

    # the integrand is even in t
    val, err = integrate.quad(outer, 0.0, math.inf, epsabs=tol, epsrel=tol, limit=200)
    val *= 2
    achieved = 2 * err + 2 * max(errs, default=0.0) * 50
    if achieved > 1e-7 * max(1.0, abs(val)):
        raise ConvergenceError(f"moment oracle r={r} reached only {achieved:.2e}")
    return val


# ---------------------------------------------------------------- q-derivatives

def q_derivatives_at_zero(I=None):
    """Derivatives of q at a = 0 written in the moments I_r.

    Returns (d3, d77, d33, d377, d7777); ``I`` overrides (I0, I2, I4).
    """
    i0, i2, i4 = I if I is not None else (I0, I2, I4)
    d3 = (-3 * i0 ** 2 + i0 * i2 / 8) / 8
    d77 = (3 * i0 - i2 / 8) ** 2 / 2 ** 6
    d33 = (2 ** 6 * 9 * i0 ** 2 - 2 ** 4 * 3 * i0 * i2 + i0 * i4 / 4 + i2 ** 2 / 4) / 2 ** 11
    d377 = (-2 ** 10 * 81 * i0 ** 2 + 2 ** 7 * 81 * i0 * i2 - 2 ** 4 * 3 * i0 * i4
            + 2 * i2 * i4 - 2 ** 5 * 9 * i2 ** 2) / 2 ** 19
    d7777 = (2 ** 6 * 27 * i0 + i4 - 2 ** 4 * 9 * i2) ** 2 / 2 ** 24
    return QDerivatives(d3, d77, d33, d377, d7777)


def q_derivatives_interval(interval=None):
    """Interval-integrated q(0; t1, t2) and its derivatives over I x I.

    Returns (q0, QDerivatives) with everything already integrated in t.
    """
    m = closed_moments(interval)
    j0, j2, j4 = m.II0, m.II2, m.II4
    q0 = j0 ** 2 / 8
    d = QDerivatives(
        (-3 * j0 ** 2 + j0 * j2) / 2 ** 6,
        (3 * j0 - j2) ** 2 / 2 ** 9,
        (72 * j0 ** 2 - 48 * j0 * j2 + 2 * j0 * j4 + 2 * j2 ** 2) / 2 ** 11,
        (-162 * j0 ** 2 + 162 * j0 * j2 - 6 * j0 * j4 + 2 * j4 * j2 - 36 * j2 ** 2) / 2 ** 13,
        (27 * j0 - 18 * j2 + j4) ** 2 / 2 ** 15,
    )
    return q0, d


# ---------------------------------------------------------------- variance law

def _law_full_line(i0, i2, i4):
    cubic = (i2 - 40 * i0) ** 2 / 2 ** 10
    log = (2 ** 6 * 3 * 17 * i0 - 2 ** 4 * 11 * i2 + i4) ** 2 / (2 ** 18 * math.pi ** 2)
    return cubic, log


def variance_law(interval=None, flavour="c"):
    """Coefficients of l^3 and l^2 log l in Var(N_I).

    ``flavour`` is "c" (all critical points), "e" (extrema) or "s" (saddles).
    Extrema and saddles only carry a log coefficient off the full line, so
    their cubic coefficient is NaN there.
    """
    if flavour not in ("c", "e", "s"):
        raise DomainError("flavour must be 'c', 'e' or 's'")
    iv = _as_interval(interval)
    if iv[1] < iv[0]:
        raise DomainError("interval upper bound below lower bound")
    full = _is_full_line(iv)
    if flavour == "c":
        if full:
            cubic, log = _law_full_line(I0, I2, I4)
        else:
            m = closed_moments(iv)
            cubic = (5 * m.II0 - m.II2) ** 2 / 16
            log = (51 * m.II0 - 22 * m.II2 + m.II4) ** 2 / (64 * math.pi ** 2)
        return VarianceLaw(cubic, log, None if full else iv, "c")
    if full:
        # N^e = N^c/2 + 1 and N^s = N^c/2 - 1 on every nondegenerate sample
        cubic, log = _law_full_line(I0, I2, I4)
        return VarianceLaw(cubic / 4, log / 4, None, flavour)
    mu = integrate_density("mu_" + flavour, iv)
    return VarianceLaw(math.nan, mu * mu, iv, flavour)


# ---------------------------------------------------------------- predictions

def term_predictions(l, C=6.0):
    """Leading asymptotics of the Taylor A-terms, remainders dropped.

    Keys "A3", "A33", "A77", "A377", "A7777" hold lambda^2 * A * weight with
    the weights of ``TAYLOR_WEIGHT``; "A0" is A_0 itself; "other" is the
    zero prediction at the l^2 log l scale for every remaining index set.
    """
    if l < 2:
        raise DomainError("l must be >= 2")
    L = float(l)
    lg = math.log(L)
    pi2 = math.pi ** 2
    return {
        "A0": 2 * math.cos(C / L) + 2 / L + 18 / pi2 * lg / L ** 2,
        "A3": -16 * L ** 3 - 96 / pi2 * L ** 2 * lg,
        "A33": 384 / pi2 * L ** 2 * lg,
        "A77": 32 * L ** 3 - 64 / pi2 * L ** 2 * lg,
        "A377": -512 / pi2 * L ** 2 * lg,
        "A7777": 512 / pi2 * L ** 2 * lg,
        "other": 0.0,
    }


def index_key(index):
    """Canonical name for a multiset of perturbation indices, e.g. (7, 3, 7) -> "A377"."""
    return "A" + "".join(str(i) for i in sorted(index))


def zero_term_asymptotic(l, q0=None):
    """(1/8)[2 l^3 + (18/pi^2) l^2 log l] q(0), the A_0 term net of E[N^c]^2."""
    q0 = I0 * I0 if q0 is None else q0
    L = float(l)
    return (2 * L ** 3 + 18 / math.pi ** 2 * L ** 2 * math.log(L)) * q0 / 8


def expected_count(l):
    """Exact E[N^c] for degree l.

    Single-point Kac-Rice with the exact Hessian covariance gives
    2 + 2 lam k^{3/2} / sqrt(k + 2) with k = 1 - 2/lam.
    """
    if l < 1:
        raise DomainError("l must be >= 1")
    lam = l * (l + 1.0)
    k = 1 - 2 / lam
    return 2 + 2 * lam * k ** 1.5 / math.sqrt(k + 2)


def mu_c_total():
    return -1.0 / (3 * SQRT3 * math.pi)


def value_density(kind, t):
    """Leading-order density of critical values, normalized by lam / 2.

    Given the value t, det Hess ~ 2 t^2 - R^2 with R^2 chi-square on two
    degrees of freedom, so the positive and negative parts integrate in
    closed form.  "c" is p0 itself; "e" + "s" = "c".
    """
    x = np.asarray(t, dtype=float)
    t2 = x * x
    g = SQRT_2_PI * np.exp(-t2 / 2)
    if kind == "c":
        out = g * (t2 - 1 + 2 * np.exp(-t2))
    elif kind == "e":
        out = g * (t2 - 1 + np.exp(-t2))
    elif kind == "s":
        out = g * np.exp(-t2)
    else:
        raise DomainError("kind must be 'c', 'e' or 's'")
    return float(out) if np.ndim(t) == 0 else out


def expected_count_interval(l, interval=None, kind="c"):
    """Leading term (lam / 2) * integral over I of value_density(kind)."""
    if l < 1:
        raise DomainError("l must be >= 1")
    a, b = _as_interval(interval)
    lo, hi = max(a, -TRUNC), min(b, TRUNC)
    if hi <= lo:
        return 0.0
    pts = [p for p in (-1.0, 0.0, 1.0) if lo < p < hi]
    val, _ = integrate.quad(lambda s: value_density(kind, s), lo, hi, points=pts or None,
                            epsabs=1e-13, epsrel=1e-12)
    return l * (l + 1.0) / 2 * val
