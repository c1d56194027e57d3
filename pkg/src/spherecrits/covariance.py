"""Covariance objects for the two-point Kac-Rice computation along the equator.

The first point sits at ``(theta, lon) = (pi/2, 0)`` and the second at
``(pi/2, phi)``; index 1 is the transverse direction ``d/dtheta`` and index
2 the direction along the geodesic. The Hessian vector is
``(f_11, f_12, f_22)`` scaled by ``sqrt(8)/lambda``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import legendre
from .errors import DegenerateGeometryError, DomainError, NotPSDError, SingularArgumentError

U1 = np.array([[3.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 3.0]])
U = np.block([[U1, np.zeros((3, 3))], [np.zeros((3, 3)), U1]])

GAP_TOL = 1e-8
PSD_TOL = 1e-9


def lam(l: int) -> float:
    return float(l * (l + 1))


class AlphaBetaGamma(NamedTuple):
    alpha: tuple
    beta: tuple
    gamma: tuple
    degree: int = 0
    phi: float = 0.0


class GradientCovariance(NamedTuple):
    matrix: np.ndarray
    gaps: tuple
    positive_definite: bool


class PerturbationVector(NamedTuple):
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float
    a6: float
    a7: float
    a8: float

    @property
    def array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class ConditionalCovariance(NamedTuple):
    block1: np.ndarray
    block2: np.ndarray
    assembled: np.ndarray
    valid: bool


def _check_phi(phi):
    if not np.all((np.asarray(phi) > 0) & (np.asarray(phi) < math.pi)):
        raise DomainError("phi must lie in (0, pi)")


def abg_array(l: int, phi) -> np.ndarray:
    """The nine ingredients stacked as ``(a1, a2, b1, b2, b3, g1, g2, g3, g4)``."""
    _check_phi(phi)
    phi = np.asarray(phi, dtype=float)
    x = np.cos(phi)
    s = np.sin(phi)
    _, p1, p2, p3, p4 = legendre.jet_values(l, x)
    s2 = s * s
    return np.stack([
        p1,
        -s2 * p2 + x * p1,
        s * p2,
        s * x * p2 + s * p1,
        -s2 * s * p3 + 3 * s * x * p2 + s * p1,
        (2 + x * x) * p2 + x * p1,
        -s2 * p3 + x * p2,
        -s2 * x * p3 + (-2 * s2 + x * x) * p2 + x * p1,
        s2 * s2 * p4 - 6 * s2 * x * p3 + (-4 * s2 + 3 * x * x) * p2 + x * p1,
    ])


def abg(l: int, phi: float) -> AlphaBetaGamma:
    if l < 1:
        raise DomainError("need l >= 1")
    v = [float(t) for t in abg_array(l, float(phi))]
    return AlphaBetaGamma(tuple(v[0:2]), tuple(v[2:5]), tuple(v[5:9]), int(l), float(phi))


def _alphas(l, phi):
    x = math.cos(phi)
    s2 = math.sin(phi) ** 2
    try:
        _, p1, p2, _, _ = legendre.jet_values(l, x)
    except SingularArgumentError:
        _, p1, p2 = legendre.jet_ladder(l, x, 2)
    return float(p1), float(-s2 * p2 + x * p1)


def gradient_cov(l: int, phi: float) -> GradientCovariance:
    """Covariance of ``(grad f(x), grad f(y))`` in the equatorial frame.

    Near coincident or antipodal points the jet is taken from the additive
    ladder, which is regular there, so the degeneracy can be diagnosed.
    """
    if l < 1:
        raise DomainError("need l >= 1")
    _check_phi(phi)
    L = lam(l)
    a1, a2 = _alphas(l, phi)
    A = np.diag([L / 2] * 4)
    A[0, 2] = A[2, 0] = a1
    A[1, 3] = A[3, 1] = a2
    gaps = (L * L - 4 * a1 * a1, L * L - 4 * a2 * a2)
    pd = min(gaps) > GAP_TOL * L * L
    return GradientCovariance(A, gaps, bool(pd))


def cond_blocks(l: int, phi, variant: str = "exact"):
    """``(D1, D2)`` arrays of shape ``(..., 3, 3)``.

    ``variant="exact"`` subtracts the self-variance term ``2/lambda`` from the
    mixed-derivative entry, which is what conditioning the joint Gaussian
    gives; ``variant="transcribed"`` leaves that term out.
    """
    if variant not in ("exact", "transcribed"):
        raise ValueError(f"unknown variant {variant!r}")
    L = lam(l)
    a1, a2, b1, b2, b3, g1, g2, g3, g4 = abg_array(l, phi)
    gap1 = L * L - 4 * a1 * a1
    gap2 = L * L - 4 * a2 * a2
    if np.any(gap1 <= GAP_TOL * L * L) or np.any(gap2 <= GAP_TOL * L * L):
        raise DegenerateGeometryError(f"gradient covariance singular at l={l}")
    shape = np.shape(a1)
    D1 = np.zeros(shape + (3, 3))
    D2 = np.zeros(shape + (3, 3))
    D1[..., 0, 0] = 3 - 16 * b2 * b2 / (L * gap2) - 2 / L
    D1[..., 0, 2] = D1[..., 2, 0] = 1 - 16 * b2 * b3 / (L * gap2) + 2 / L
    D1[..., 1, 1] = 1 - 16 * b1 * b1 / (L * gap1) - (2 / L if variant == "exact" else 0.0)
    D1[..., 2, 2] = 3 - 16 * b3 * b3 / (L * gap2) - 2 / L
    D2[..., 0, 0] = 8 * (g1 - 4 * a2 * b2 * b2 / gap2) / (L * L)
    D2[..., 0, 2] = D2[..., 2, 0] = 8 * (g3 - 4 * a2 * b2 * b3 / gap2) / (L * L)
    D2[..., 1, 1] = 8 * (g2 - 4 * a1 * b1 * b1 / gap1) / (L * L)
    D2[..., 2, 2] = 8 * (g4 - 4 * a2 * b3 * b3 / gap2) / (L * L)
    return D1, D2


def assemble(D1: np.ndarray, D2: np.ndarray) -> np.ndarray:
    M = np.block([[D1, D2], [D2, D1]])
    return 0.5 * (M + M.swapaxes(-1, -2))


def is_psd(M: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(M)
    return bool(w[0] >= -PSD_TOL * np.trace(M))


def cond_cov(l: int, phi: float, variant: str = "exact") -> ConditionalCovariance:
    """Conditional covariance of the scaled Hessians given both gradients vanish."""
    if not gradient_cov(l, phi).positive_definite:
        raise DegenerateGeometryError(f"gradient covariance not PD at l={l}, phi={phi}")
    D1, D2 = cond_blocks(l, float(phi), variant)
    M = assemble(D1, D2)
    return ConditionalCovariance(D1, D2, M, is_psd(M))


def a_from_blocks(D1, D2) -> np.ndarray:
    return np.stack([
        D1[..., 0, 0] - 3, D1[..., 1, 1] - 1, D1[..., 2, 2] - 3, D1[..., 0, 2] - 1,
        D2[..., 0, 0], D2[..., 1, 1], D2[..., 2, 2], D2[..., 0, 2],
    ], axis=-1)


def perturbation_array(l: int, phi, variant: str = "exact") -> np.ndarray:
    """Perturbation vectors for an array of angles, shape ``phi.shape + (8,)``."""
    return a_from_blocks(*cond_blocks(l, phi, variant))


def perturbation(l: int, phi: float, variant: str = "exact") -> PerturbationVector:
    cc = cond_cov(l, phi, variant)
    return PerturbationVector(*(float(v) for v in a_from_blocks(cc.block1, cc.block2)))


def blocks_from_a(a):
    a = np.asarray(a, dtype=float)
    D1 = np.zeros(a.shape[:-1] + (3, 3))
    D2 = np.zeros_like(D1)
    D1[..., 0, 0] = 3 + a[..., 0]
    D1[..., 1, 1] = 1 + a[..., 1]
    D1[..., 2, 2] = 3 + a[..., 2]
    D1[..., 0, 2] = D1[..., 2, 0] = 1 + a[..., 3]
    D2[..., 0, 0] = a[..., 4]
    D2[..., 1, 1] = a[..., 5]
    D2[..., 2, 2] = a[..., 6]
    D2[..., 0, 2] = D2[..., 2, 0] = a[..., 7]
    return D1, D2


def delta_from_a(a) -> ConditionalCovariance:
    """``Delta(a)`` for any real 8-vector; ``valid`` reports positive definiteness."""
    a = np.asarray(a, dtype=float).reshape(8)
    D1, D2 = blocks_from_a(a)
    M = assemble(D1, D2)
    w = np.linalg.eigvalsh(M)
    valid = bool(w[0] > PSD_TOL * np.trace(M))
    return ConditionalCovariance(D1, D2, M, valid)


def require_psd(a) -> np.ndarray:
    cc = delta_from_a(a)
    w = np.linalg.eigvalsh(cc.assembled)
    if w[0] < -PSD_TOL * np.trace(cc.assembled):
        raise NotPSDError(f"Delta(a) is not PSD (min eigenvalue {w[0]:.3e})")
    return cc.assembled


class PerturbationAsympt(NamedTuple):
    """Leading terms of the normalized ingredients entering ``a``.

    ``alpha*_sq`` are divided by ``lambda^2``, ``beta1_sq`` by ``lambda^3``,
    ``beta2``/``beta3`` by ``lambda^(3/2)`` and the ``gamma`` by ``lambda^2``.
    """
    alpha1_sq: float
    alpha2_sq: float
    beta1_sq: float
    beta2: float
    beta3: float
    gamma2: float
    gamma3: float
    gamma4: float


def perturbation_asympt(l: int, phi: float, C: float = 6.0) -> PerturbationAsympt:
    if not (C / l <= phi <= math.pi / 2):
        raise DomainError(f"phi must lie in [C/l, pi/2], got {phi}")
    lg = legendre
    h0, h01, h10 = lg.hilb_h(0, 0), lg.hilb_h(0, 1), lg.hilb_h(1, 0)
    A1 = lg.hilb_a1(phi)
    s = math.sin(phi)
    c = math.cos(phi)
    L = float(l)
    ps0 = lg.hilb_psi(0, l, 0, phi)
    ps0p = lg.hilb_psi(0, l, 1, phi)
    ps0m = lg.hilb_psi(0, l, -1, phi)
    ps1 = lg.hilb_psi(1, l, 0, phi)
    sin, cos = math.sin, math.cos
    b = 1 - 1 / (4 * L)
    r = L ** 1.5
    a1sq = h0 ** 2 * sin(ps0) ** 2 / (L ** 3 * s ** 3)
    a2sq = (h0 ** 2 * cos(ps0) ** 2 / (L * s)
            + 2 * h0 ** 2 * sin(ps0p) * cos(ps0) / (L * s) ** 2
            - h0 * h01 * sin(ps0) * cos(ps0) / (L * L * phi * s)
            - h0 ** 2 * sin(ps0m) * cos(ps0) / (L * s) ** 2
            + h0 ** 2 * c * cos(ps0) * sin(ps0) / (L * s) ** 2)
    b1sq = h0 ** 2 * cos(ps0) ** 2 / (L * s) ** 3
    b2 = -h0 * cos(ps0) * c / (L * s) ** 1.5
    # terms inherited from P''' carry the sign of (x^2 - 1)^3 = -sin^6
    b3 = (h0 * sin(ps0) * b / math.sqrt(L * s)
          - 1.5 * h0 * sin(ps0) / (r * math.sqrt(s))
          + h0 * sin(ps0) / (r * math.sqrt(s))
          + h01 * cos(ps0) / (r * phi * math.sqrt(s))
          + h10 * sin(ps1) * A1 / (r * math.sqrt(s))
          + h0 * (2 * cos(ps0p) + 2.5 * cos(ps0m)) / (L * s) ** 1.5
          - 3 * h0 * c * cos(ps0) / (L * s) ** 1.5)
    g2 = h0 * sin(ps0) / (L * s) ** 1.5
    g3 = h0 * sin(ps0) * c / (L * s) ** 1.5
    g4 = (h0 * cos(ps0) * b / math.sqrt(L * s)
          - 2 * h0 * cos(ps0) / (r * math.sqrt(s))
          + h0 * cos(ps0) / (r * math.sqrt(s))
          - h01 * sin(ps0) / (r * phi * math.sqrt(s))
          + h10 * cos(ps1) * A1 / (r * math.sqrt(s))
          - h0 * (3.5 * sin(ps0p) + 4.5 * sin(ps0m)) / (L * s) ** 1.5
          + 6 * h0 * c * sin(ps0) / (L * s) ** 1.5)
    return PerturbationAsympt(a1sq, a2sq, b1sq, b2, b3, g2, g3, g4)


def exact_normalized(l: int, phi: float) -> PerturbationAsympt:
    """The same eight normalized quantities computed exactly."""
    L = lam(l)
    a1, a2, b1, b2, b3, g1, g2, g3, g4 = (float(v) for v in abg_array(l, phi))
    return PerturbationAsympt(a1 * a1 / L ** 2, a2 * a2 / L ** 2, b1 * b1 / L ** 3,
                              b2 / L ** 1.5, b3 / L ** 1.5, g2 / L ** 2, g3 / L ** 2, g4 / L ** 2)
