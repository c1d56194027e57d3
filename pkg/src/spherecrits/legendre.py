"""Legendre polynomials, their first four derivatives, and high-degree asymptotics.

Two independent exact routes are provided for the derivatives: the
closed recurrences in terms of ``P_l, ..., P_{l+4}`` (``eval_jet``) and the
additive ladder ``P^(k)_n = P^(k)_{n-2} + (2n-1) P^(k-1)_{n-1}``
(``jet_ladder``). The asymptotic side covers the Hilb expansion in Bessel
functions, the Bessel large-argument expansion and the leading-order
derivative approximations built from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _accel
from .errors import DomainError, SingularArgumentError

TOL_EDGE = 1e-7
BESSEL_SWITCH = 12.0
BESSEL_MIN_TERMS = 30

H00 = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------- kernels

@_accel.njit
def _upward_nb(l, x, extra):
    # serial in k, so keep x innermost where the loop vectorises
    n = x.shape[0]
    out = np.empty((extra + 1, n))
    pm = np.zeros(n)
    p = np.ones(n)
    if l == 0:
        out[0] = p
    for k in range(1, l + extra + 1):
        c1, c2 = 2 * k - 1, k - 1
        for i in range(n):
            t = (c1 * x[i] * p[i] - c2 * pm[i]) / k
            pm[i] = p[i]
            p[i] = t
        if k >= l:
            out[k - l] = p
    return out


def _upward_np(l, x, extra):
    out = np.empty((extra + 1, x.shape[0]))
    if l == 0:
        p, pm = np.ones_like(x), np.zeros_like(x)
    else:
        pm, p = np.ones_like(x), x.copy()
        for k in range(2, l + 1):
            pm, p = p, ((2 * k - 1) * x * p - (k - 1) * pm) / k
    out[0] = p
    for j in range(1, extra + 1):
        k = l + j
        pm, p = p, ((2 * k - 1) * x * p - (k - 1) * pm) / k
        out[j] = p
    return out


@_accel.njit
def _ladder_nb(l, x, kmax):
    n = x.shape[0]
    prev2 = np.zeros((kmax + 1, n))
    prev1 = np.zeros((kmax + 1, n))
    cur = np.empty((kmax + 1, n))
    for i in range(n):
        prev2[0, i] = 1.0
        prev1[0, i] = x[i]
        if kmax >= 1:
            prev1[1, i] = 1.0
    if l == 0:
        return prev2
    for m in range(2, l + 1):
        c1, c2 = 2 * m - 1, m - 1
        for i in range(n):
            cur[0, i] = (c1 * x[i] * prev1[0, i] - c2 * prev2[0, i]) / m
        for k in range(1, kmax + 1):
            for i in range(n):
                cur[k, i] = prev2[k, i] + c1 * prev1[k - 1, i]
        prev2, prev1, cur = prev1, cur, prev2
    return prev1


def _ladder_np(l, x, kmax):
    prev2 = np.zeros((kmax + 1, x.shape[0]))
    prev1 = np.zeros_like(prev2)
    prev2[0] = 1.0
    prev1[0] = x
    if kmax >= 1:
        prev1[1] = 1.0
    if l == 0:
        return prev2
    for m in range(2, l + 1):
        cur = np.empty_like(prev1)
        cur[0] = ((2 * m - 1) * x * prev1[0] - (m - 1) * prev2[0]) / m
        cur[1:] = prev2[1:] + (2 * m - 1) * prev1[:-1]
        prev2, prev1 = prev1, cur
    return prev1


def _as_array(x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    return np.ascontiguousarray(arr.ravel()), np.shape(x)


def p_block(l: int, x, count: int = 1) -> np.ndarray:
    """``P_l(x), ..., P_{l+count-1}(x)`` stacked on the first axis."""
    if l < 0:
        raise DomainError(f"degree must be >= 0, got {l}")
    flat, shape = _as_array(x)
    if np.any(np.abs(flat) > 1.0):
        raise DomainError("argument outside [-1, 1]")
    if _accel.backend() == "numba":
        out = _upward_nb(int(l), flat, int(count) - 1)
    else:
        out = _upward_np(int(l), flat, int(count) - 1)
    return out.reshape((count,) + shape)


def eval_p(l: int, x):
    """Legendre polynomial by upward three-term recurrence."""
    out = p_block(l, x, 1)[0]
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- jets

@dataclass(frozen=True)
class LegendreJet:
    degree: int
    argument: float
    values: tuple

    @property
    def p(self):
        return self.values[0]

    def __getitem__(self, k):
        return self.values[k]


# omega tables: rows indexed by power of l, columns by shift v; entries are
# polynomial coefficient lists in x (lowest degree first)
OMEGA3 = {
    2: [[0, 0, 0, -1], [0, 0, 3], [0, -3], [1]],
    1: [[0, -3, 0, -5], [3, 0, 18], [0, -18], [5]],
    0: [[0, -9, 0, -6], [6, 0, 27], [0, -24], [6]],
}
OMEGA4 = {
    3: [[0, 0, 0, 0, 1], [0, 0, 0, -4], [0, 0, 6], [0, -4], [1]],
    2: [[0, 0, 6, 0, 9], [0, -12, 0, -42], [6, 0, 66], [0, -42], [9]],
    1: [[3, 0, 42, 0, 26], [0, -78, 0, -146], [30, 0, 231], [0, -134], [26]],
    0: [[9, 0, 72, 0, 24], [0, -111, 0, -168], [36, 0, 246], [0, -132], [24]],
}


def _neumaier(terms):
    s = np.zeros_like(terms[0])
    c = np.zeros_like(terms[0])
    for t in terms:
        tot = s + t
        big = np.abs(s) >= np.abs(t)
        c += np.where(big, (s - tot) + t, (t - tot) + s)
        s = tot
    return s + c


def _omega_sum(table, l, x, P):
    terms = []
    for u, row in table.items():
        lu = float(l) ** u
        for v, coeffs in enumerate(row):
            w = np.polynomial.polynomial.polyval(x, coeffs)
            terms.append(lu * w * P[v])
    return _neumaier(terms)


def jet_values(l: int, x) -> np.ndarray:
    """``(P, P', P'', P''', P'''')`` at ``x`` from the closed recurrences.

    Vectorized over ``x``; shape ``(5,) + x.shape``.
    """
    if l < 1:
        raise DomainError(f"jet needs degree >= 1, got {l}")
    flat, shape = _as_array(x)
    if np.any(np.abs(flat) >= 1.0 - TOL_EDGE):
        raise SingularArgumentError(f"|x| >= 1 - {TOL_EDGE}: recurrences are singular")
    P = p_block(l, flat, 5)
    d = flat * flat - 1.0
    out = np.empty((5, flat.shape[0]))
    out[0] = P[0]
    out[1] = (l + 1) / d * _neumaier([P[1], -flat * P[0]])
    t2a = _neumaier([flat * flat * P[0], -2 * flat * P[1], P[2]])
    t2b = _neumaier([(1 + 2 * flat * flat) * P[0], -5 * flat * P[1], 2 * P[2]])
    out[2] = _neumaier([l * (l + 1) * t2a, (l + 1) * t2b]) / (d * d)
    out[3] = (l + 1) * _omega_sum(OMEGA3, l, flat, P) / d ** 3
    out[4] = (l + 1) * _omega_sum(OMEGA4, l, flat, P) / d ** 4
    # orders above l vanish identically; the recurrences would return rounding noise
    out[l + 1:] = 0.0
    return out.reshape((5,) + shape)


def eval_jet(l: int, x: float) -> LegendreJet:
    vals = jet_values(l, float(x))
    return LegendreJet(int(l), float(x), tuple(float(v) for v in vals))


def jet_ladder(l: int, x, kmax: int = 4) -> np.ndarray:
    """Derivatives 0..kmax by the additive ladder; valid on all of [-1, 1]."""
    if l < 0:
        raise DomainError(f"degree must be >= 0, got {l}")
    flat, shape = _as_array(x)
    if np.any(np.abs(flat) > 1.0):
        raise DomainError("argument outside [-1, 1]")
    if _accel.backend() == "numba":
        out = _ladder_nb(int(l), flat, int(kmax))
    else:
        out = _ladder_np(int(l), flat, int(kmax))
    return out.reshape((kmax + 1,) + shape)


def endpoint_derivative(l: int, k: int, sign: int = 1) -> float:
    """``P_l^(k)(+-1)`` in closed form."""
    if k > l:
        return 0.0
    val = 1.0
    for j in range(k):
        val *= (l - j) * (l + j + 1) / (2.0 * (j + 1))
    return val if sign > 0 else val * (-1) ** (l + k)


# ---------------------------------------------------------------- Bessel

def _nk(n: int, k: int) -> float:
    """Hankel symbol ``(n, k)``."""
    num = 1.0
    for j in range(1, k + 1):
        num *= 4 * n * n - (2 * j - 1) ** 2
    return num / (4.0 ** k * math.factorial(k))


def _bessel_series_float(n, x):
    half = 0.5 * x
    term = half ** n / math.factorial(n)
    terms = [term]
    k = 0
    while k < BESSEL_MIN_TERMS or abs(term) > 1e-18 * max(abs(v) for v in terms):
        k += 1
        term *= -half * half / (k * (k + n))
        terms.append(term)
        if k > 400:
            break
    return math.fsum(terms)


def _bessel_series_mp(n, x):
    import mpmath

    dps = 20 + int(x / 2.3)
    with mpmath.workdps(dps):
        half = mpmath.mpf(x) / 2
        term = half ** n / mpmath.factorial(n)
        total = term
        k = 0
        tiny = mpmath.mpf(10) ** (-dps)
        while k < BESSEL_MIN_TERMS or abs(term) > tiny:
            k += 1
            term *= -half * half / (k * (k + n))
            total += term
        return float(total)


def bessel_asymptotic(n: int, x: float, terms: int | None = None) -> float:
    """Large-argument Hankel expansion, optimally truncated unless ``terms`` is given."""
    chi = x - n * math.pi / 2 - math.pi / 4
    pre = math.sqrt(2.0 / (math.pi * x))
    kmax = terms if terms is not None else 60
    c_sum, s_sum = 0.0, 0.0
    last = math.inf
    for k in range(kmax):
        tc = (-1) ** k * _nk(n, 2 * k) / (2 * x) ** (2 * k)
        ts = (-1) ** k * _nk(n, 2 * k + 1) / (2 * x) ** (2 * k + 1)
        size = abs(tc) + abs(ts)
        if terms is None and size > last:
            break
        c_sum += tc
        s_sum += ts
        last = size
        if terms is None and size < 1e-18:
            break
    return pre * (math.cos(chi) * c_sum - math.sin(chi) * s_sum)


def bessel_j(n: int, x: float, mode: str = "exact") -> float:
    """Bessel ``J_n(x)`` for ``n`` in {0, 1, 2}.

    ``exact`` switches from the ascending series to the Hankel expansion at
    ``BESSEL_SWITCH``. ``series`` sums the ascending series in extended
    precision at any ``x``; ``asymptotic`` always uses the Hankel expansion.
    """
    if n not in (0, 1, 2):
        raise DomainError(f"order must be 0, 1 or 2, got {n}")
    if x < 0:
        raise DomainError("x must be positive")
    if x == 0:
        return 1.0 if n == 0 else 0.0
    if mode == "exact":
        if x < BESSEL_SWITCH:
            return _bessel_series_float(n, x)
        return bessel_asymptotic(n, x)
    if mode == "series":
        if x < BESSEL_SWITCH:
            return _bessel_series_float(n, x)
        return _bessel_series_mp(n, x)
    if mode == "asymptotic":
        return bessel_asymptotic(n, x)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------- Hilb

def hilb_a1(phi: float) -> float:
    """``A_1`` for Legendre (Jacobi alpha = beta = 0)."""
    if phi < 1e-3:
        p2 = phi * phi
        return -phi / 24 * (1 + p2 / 15 + 2 * p2 * p2 / 315)
    return (phi / math.tan(phi) - 1) / (8 * phi)


def hilb_a2(phi: float) -> float:
    """Second Hilb coefficient, from the recursion on the A_n (regular at 0)."""
    if phi < 2e-2:
        p2 = phi * phi
        return p2 * (7 / 1920 + 13 * p2 / 20160 + 19 * p2 * p2 / 201600)
    s = math.sin(phi)
    return (3 / (64 * phi * math.tan(phi)) + 9 / (128 * s * s)
            - 15 / (128 * phi * phi) - 1 / 128)


_HILB_A = (lambda phi: 1.0, hilb_a1, hilb_a2)


def hilb_p(l: int, u: int, phi: float, m: int) -> float:
    """``m``-term Hilb approximation of ``P_{l+u}(cos phi)``."""
    if not 0 < phi <= math.pi / 2:
        raise DomainError("phi must lie in (0, pi/2]")
    if m not in (1, 2, 3):
        raise DomainError("m must be 1, 2 or 3")
    if l < 1 or u < 0:
        raise DomainError("need l >= 1 and u >= 0")
    N = l + u + 0.5
    total = 0.0
    for k in range(m):
        total += _HILB_A[k](phi) * bessel_j(k, N * phi) / N ** k
    return math.sqrt(phi / math.sin(phi)) * total


class HilbTerm(NamedTuple):
    order: int
    shift: int
    psi: float
    h: tuple
    s: tuple
    a1: float


def hilb_psi(n: int, l: int, u: int, phi: float) -> float:
    return (l + u + 0.5) * phi - n * math.pi / 2 - math.pi / 4


def hilb_h(n: int, k: int) -> float:
    return H00 * _nk(n, k) / 2 ** k


def hilb_s(n: int, k: int, l: int, phi: float) -> float:
    a = 1.0 if n == 0 else hilb_a1(phi)
    return a / (math.sqrt(math.sin(phi)) * phi ** k * l ** (k + n + 0.5))


def hilb_term(n: int, u: int, l: int, phi: float, kmax: int = 3) -> HilbTerm:
    return HilbTerm(n, u, hilb_psi(n, l, u, phi),
                    tuple(hilb_h(n, k) for k in range(kmax)),
                    tuple(hilb_s(n, k, l, phi) for k in range(kmax)),
                    hilb_a1(phi))


def asympt_derivatives(l: int, phi: float, C: float = 6.0):
    """Leading-order ``(P', P'', P''', P'''')`` at ``cos phi``.

    Only the explicit terms are kept; the bounded-function remainders are
    dropped, so agreement with the exact jet is checked against fitted bands.
    """
    if not (C / l <= phi <= math.pi / 2):
        raise DomainError(f"phi must lie in [C/l, pi/2] = [{C / l}, {math.pi / 2}]")
    s = math.sin(phi)
    c = math.cos(phi)
    L = float(l)
    h00, h01, h02, h03 = hilb_h(0, 0), hilb_h(0, 1), hilb_h(0, 2), hilb_h(0, 3)
    h10 = hilb_h(1, 0)
    s00, s01, s02, s03 = (hilb_s(0, k, l, phi) for k in range(4))
    s10 = hilb_s(1, 0, l, phi)
    p0 = hilb_psi(0, l, 0, phi)
    p0p = hilb_psi(0, l, 1, phi)
    p0m = hilb_psi(0, l, -1, phi)
    p1 = hilb_psi(1, l, 0, phi)
    p1p = hilb_psi(1, l, 1, phi)
    b = 1 - 1 / (4 * L)               # sum_{j<=1} binom(-1/2, j) / (2 l)^j
    b52 = 1 - 5 / (4 * L)             # same with binom(-5/2, j)

    d1 = L / s ** 2 * (h00 * s * math.sin(p0) * s00)

    d2 = (L ** 2 / s ** 4 * (-h00 * s * s * math.cos(p0) * s00 * b
                             - 2 * h00 * s * math.sin(p0p) * s00 / L)
          + L / s ** 4 * (-h00 * s * s * math.cos(p0) * s00)
          + L ** 2 / s ** 4 * (h01 * s * s * math.sin(p0) * s01)
          + L ** 2 / s ** 4 * (-h10 * s * s * math.cos(p1) * s10)
          + L / s ** 4 * (h00 * s * math.sin(p0m) * s00))

    # (x^2 - 1)^3 = -sin^6: the whole bracket enters with a minus sign
    d3 = -(L ** 3 / s ** 6 * (h00 * s ** 3 * math.sin(p0) * s00 * b
                             - 3 * h00 * s * s * math.cos(p0p) * s00 / L)
          + L ** 2 / s ** 6 * (h00 * s ** 3 * math.sin(p0) * s00)
          + L ** 3 / s ** 6 * (h01 * s ** 3 * math.cos(p0) * s01)
          + L ** 3 / s ** 6 * (-h10 * s ** 3 * math.sin(p1) * s10)
          + L ** 2 / s ** 6 * (0.5 * h00 * s * s * (math.cos(p0p) + 5 * math.cos(p0m)) * s00))

    even = h00 * s00 - h02 * s02
    odd = h01 * s01 - h03 * s03
    d4 = (L ** 4 / s ** 8 * (s ** 4 * math.cos(p0) * (h00 * s00 * b - h02 * s02 * b52)
                             + 4 * s ** 3 * math.cos(p1p) * even / L)
          + L ** 3 / s ** 8 * (s ** 4 * math.cos(p0) * even + s ** 4 * s00 / L)
          + L ** 4 / s ** 8 * (-s ** 4 * math.sin(p0) * odd)
          + L ** 4 / s ** 8 * (h10 * s ** 4 * math.cos(p1) * s10 * b)
          + L ** 3 / s ** 8 * (-1.5 * h00 * s ** 3 * (math.sin(p0p) + 3 * math.sin(p0m)) * s00 * b)
          + L ** 2 / s ** 8 * (-1.5 * h00 * s ** 3 * (math.sin(p0p) + 3 * math.sin(p0m)) * s00))
    return d1, d2, d3, d4


# ---------------------------------------------------------------- error envelopes

def _window(l, phi, points):
    # one oscillation period starting at phi; pointwise errors vanish at phase zeros
    return phi + np.linspace(0.0, 2 * math.pi / (l + 0.5), points)


def asympt_envelope(l: int, phi: float, points: int = 32) -> np.ndarray:
    """Relative error of ``asympt_derivatives`` against the exact jet, per order.

    Both the error and the exact magnitude are maximized over one period, so
    the result does not depend on where the phase happens to sit.
    """
    err = np.zeros(4)
    mag = np.zeros(4)
    for p in _window(l, phi, points):
        if p > math.pi / 2:
            break
        ex = jet_values(l, math.cos(p))[1:]
        err = np.maximum(err, np.abs(ex - np.array(asympt_derivatives(l, p))))
        mag = np.maximum(mag, np.abs(ex))
    return err / mag


def hilb_envelope(l: int, phi: float, m: int, u: int = 0, points: int = 24) -> float:
    """Largest |hilb_p - eval_p| over one period starting at ``phi``."""
    return max(abs(hilb_p(l, u, p, m) - float(eval_p(l + u, math.cos(p))))
               for p in _window(l, phi, points) if p <= math.pi / 2)


def p1_band_shape(l: int, phi: float) -> float:
    """(l / sin^2 phi) (phi^{-5/2} l^{-1/2} + phi^{-1}): the P' remainder shape."""
    return l / math.sin(phi) ** 2 * (phi ** -2.5 / math.sqrt(l) + 1 / phi)


def p1_band_check(l: int, train, test, slack: float = 1.5):
    """Fit the P' band constant on ``train`` angles and verify it on ``test``.

    Returns (constant, worst test ratio / constant, passed).
    """
    def ratio(phi):
        err = max(abs(jet_values(l, math.cos(p))[1] - asympt_derivatives(l, p)[0])
                  for p in _window(l, phi, 32) if p <= math.pi / 2)
        return err / p1_band_shape(l, phi)

    K = float(max(ratio(p) for p in train))
    worst = float(max(ratio(p) for p in test)) / K
    return K, worst, worst <= slack
