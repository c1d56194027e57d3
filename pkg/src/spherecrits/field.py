"""Random spherical harmonics, their jets, and their critical points.

The field is evaluated as a harmonic homogeneous polynomial F of degree l
in R^3, built from normalized recurrences in (z, r^2) times Re/Im (x+iy)^m.
Value, Euclidean gradient and Hessian are carried together, so sphere jets
follow by projection: for unit p and tangent u, v

    grad f = P G,   Hess f(u, v) = u^T H v - l F (u . v)

since p . G = l F for a homogeneous polynomial.  Nothing in the evaluation
is singular at the poles; only the (e_theta, e_phi) frame is.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from .errors import DomainError, IntegrityError, PoleProximityError

POLE_GUARD = 1e-3
GRID_PER_WAVELENGTH = 4
NEWTON_TOL = 1e-10
MAX_NEWTON = 50
DEGENERATE_DET = 1e-12
# seeding grid is this many times finer than the nominal spacing
SEED_OVERSAMPLE = 2
SEED_REACH = 2.0

# jet layout: value, gradient (x, y, z), Hessian (xx, yy, zz, xy, xz, yz)
_NJ = 10


class SpherePoint(NamedTuple):
    theta: float
    phi_lon: float

    def xyz(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi_lon), st * math.sin(self.phi_lon), math.cos(self.theta)])

    @staticmethod
    def from_xyz(v) -> "SpherePoint":
        x, y, z = (float(c) for c in v)
        r = math.sqrt(x * x + y * y + z * z)
        th = math.acos(max(-1.0, min(1.0, z / r)))
        ph = math.atan2(y, x) % (2 * math.pi)
        return SpherePoint(th, ph)

    def distance(self, other: "SpherePoint") -> float:
        c = (math.cos(self.theta) * math.cos(other.theta)
             + math.sin(self.theta) * math.sin(other.theta) * math.cos(self.phi_lon - other.phi_lon))
        return math.acos(max(-1.0, min(1.0, c)))


def geodesic(p, q):
    """Great-circle distance between unit vectors (stable at small and large angles)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return np.arctan2(np.linalg.norm(np.cross(p, q), axis=-1), np.sum(p * q, axis=-1))


class Jet2(NamedTuple):
    value: float
    grad: np.ndarray
    hess: np.ndarray
    chart: str = "standard"


class CriticalPoint(NamedTuple):
    point: SpherePoint
    value: float
    kind: str


class CriticalSet(NamedTuple):
    points: List[CriticalPoint]
    counts: Tuple[int, int, int]
    quality: float
    n_max: int
    n_min: int
    failures: int
    grid_per_wavelength: int
    morse_ok: bool = True

    @property
    def n_c(self):
        return self.counts[0]

    @property
    def n_e(self):
        return self.counts[1]

    @property
    def n_s(self):
        return self.counts[2]


class HarmonicField:
    """f = sum_m a_m Yhat_m with unit variance and covariance P_l(cos d).

    ``coeffs`` is ordered (m=0, cos 1, sin 1, cos 2, sin 2, ...).  An
    optional rotation R makes the object evaluate f(R x) instead.
    """

    def __init__(self, degree: int, coeffs, seed: Optional[int] = None, rotation=None):
        if degree < 1:
            raise DomainError("degree must be >= 1")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (2 * degree + 1,):
            raise DomainError(f"need {2 * degree + 1} coefficients, got {coeffs.shape}")
        self.degree = int(degree)
        self.coeffs = coeffs
        self.seed = seed
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=float)
        cc = np.zeros(degree + 1)
        ss = np.zeros(degree + 1)
        cc[0] = coeffs[0]
        cc[1:] = coeffs[1::2] * math.sqrt(2.0)
        ss[1:] = coeffs[2::2] * math.sqrt(2.0)
        norm = 1.0 / math.sqrt(2 * degree + 1)
        self._cc = np.ascontiguousarray(cc * norm)
        self._ss = np.ascontiguousarray(ss * norm)

    @property
    def lam(self):
        return self.degree * (self.degree + 1.0)

    def rotated(self, R) -> "HarmonicField":
        R = np.asarray(R, dtype=float)
        base = R if self.rotation is None else self.rotation @ R
        return HarmonicField(self.degree, self.coeffs, self.seed, base)

    def euclid_jets(self, P):
        """(F, G, H) of the polynomial at points ``P`` of shape (n, 3)."""
        P = np.ascontiguousarray(np.atleast_2d(np.asarray(P, dtype=float)))
        if self.rotation is not None:
            Q = np.ascontiguousarray(P @ self.rotation.T)
            F, G, H = _euclid_jets(self.degree, self._cc, self._ss, Q)
            R = self.rotation
            return F, G @ R, np.einsum("ki,nkl,lj->nij", R, H, R)
        return _euclid_jets(self.degree, self._cc, self._ss, P)

    def __call__(self, P):
        F, _, _ = self.euclid_jets(P)
        return F


def sample(l: int, seed: int) -> HarmonicField:
    """Field with 2l+1 iid standard normal coefficients drawn from ``seed``."""
    if l < 1:
        raise DomainError("l must be >= 1")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    return HarmonicField(l, rng.standard_normal(2 * l + 1), int(seed))


def sample_seeds(master_seed: int, n: int):
    """Deterministic per-sample 64-bit seeds spawned from one master seed."""
    kids = np.random.SeedSequence(int(master_seed)).spawn(n)
    return [int(k.generate_state(1, dtype=np.uint64)[0]) for k in kids]


# ---------------------------------------------------------------- jet kernels

@_accel.njit
def _jmul(a, b, out):
    out[0] = a[0] * b[0]
    for i in range(3):
        out[1 + i] = a[0] * b[1 + i] + b[0] * a[1 + i]
    # diagonal
    for i in range(3):
        out[4 + i] = a[0] * b[4 + i] + b[0] * a[4 + i] + 2.0 * a[1 + i] * b[1 + i]
    out[7] = a[0] * b[7] + b[0] * a[7] + a[1] * b[2] + a[2] * b[1]
    out[8] = a[0] * b[8] + b[0] * a[8] + a[1] * b[3] + a[3] * b[1]
    out[9] = a[0] * b[9] + b[0] * a[9] + a[2] * b[3] + a[3] * b[2]


@_accel.njit
def _jet_point(l, cc, ss, x, y, z, acc):
    zj = np.zeros(_NJ)
    zj[0] = z
    zj[3] = 1.0
    rj = np.zeros(_NJ)
    rj[0] = x * x + y * y + z * z
    rj[1] = 2 * x
    rj[2] = 2 * y
    rj[3] = 2 * z
    rj[4] = 2.0
    rj[5] = 2.0
    rj[6] = 2.0
    xj = np.zeros(_NJ)
    xj[0] = x
    xj[1] = 1.0
    yj = np.zeros(_NJ)
    yj[0] = y
    yj[2] = 1.0
    C = np.zeros(_NJ)
    C[0] = 1.0
    S = np.zeros(_NJ)
    t1 = np.empty(_NJ)
    t2 = np.empty(_NJ)
    q0 = np.empty(_NJ)
    q1 = np.empty(_NJ)
    q2 = np.empty(_NJ)
    ang = np.empty(_NJ)
    for i in range(_NJ):
        acc[i] = 0.0
    pmm = 1.0
    for m in range(l + 1):
        if m > 0:
            pmm *= math.sqrt((2.0 * m + 1.0) / (2.0 * m))
            # (C + iS)(x + iy)
            _jmul(C, xj, t1)
            _jmul(S, yj, t2)
            _jmul(C, yj, q0)
            _jmul(S, xj, q1)
            for i in range(_NJ):
                C[i] = t1[i] - t2[i]
                S[i] = q0[i] + q1[i]
        if cc[m] == 0.0 and ss[m] == 0.0:
            continue
        # q_m^m is a constant; q_{m+1}^m = sqrt(2m+3) z q_m^m
        for i in range(_NJ):
            q0[i] = 0.0
            q1[i] = 0.0
        q1[0] = pmm
        if l > m:
            for i in range(_NJ):
                q0[i] = q1[i]
            f = math.sqrt(2.0 * m + 3.0)
            _jmul(zj, q0, q1)
            for i in range(_NJ):
                q1[i] *= f
            for n in range(m + 2, l + 1):
                a = math.sqrt((2.0 * n + 1.0) * (2.0 * n - 1.0) / ((n - m) * (n + m)))
                b = math.sqrt((2.0 * n + 1.0) * (n + m - 1.0) * (n - m - 1.0)
                              / ((2.0 * n - 3.0) * (n + m) * (n - m)))
                _jmul(zj, q1, t1)
                _jmul(rj, q0, t2)
                for i in range(_NJ):
                    q2[i] = a * t1[i] - b * t2[i]
                    q0[i] = q1[i]
                    q1[i] = q2[i]
        for i in range(_NJ):
            ang[i] = cc[m] * C[i] + ss[m] * S[i]
        _jmul(q1, ang, t1)
        for i in range(_NJ):
            acc[i] += t1[i]


@_accel.njit
def _euclid_nb(l, cc, ss, P):
    n = P.shape[0]
    out = np.empty((n, _NJ))
    acc = np.empty(_NJ)
    for k in range(n):
        _jet_point(l, cc, ss, P[k, 0], P[k, 1], P[k, 2], acc)
        for i in range(_NJ):
            out[k, i] = acc[i]
    return out


def _jmul_np(a, b):
    out = np.empty_like(a if a.ndim >= b.ndim else b)
    out[0] = a[0] * b[0]
    out[1:4] = a[0] * b[1:4] + b[0] * a[1:4]
    out[4:7] = a[0] * b[4:7] + b[0] * a[4:7] + 2 * a[1:4] * b[1:4]
    out[7] = a[0] * b[7] + b[0] * a[7] + a[1] * b[2] + a[2] * b[1]
    out[8] = a[0] * b[8] + b[0] * a[8] + a[1] * b[3] + a[3] * b[1]
    out[9] = a[0] * b[9] + b[0] * a[9] + a[2] * b[3] + a[3] * b[2]
    return out


def _euclid_np(l, cc, ss, P):
    n = P.shape[0]
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    zero = np.zeros(n)
    one = np.ones(n)
    zj = np.stack([z, zero, zero, one] + [zero] * 6)
    rj = np.stack([x * x + y * y + z * z, 2 * x, 2 * y, 2 * z, 2 * one, 2 * one, 2 * one, zero, zero, zero])
    xj = np.stack([x, one] + [zero] * 8)
    yj = np.stack([y, zero, one] + [zero] * 7)
    C = np.zeros((_NJ, n))
    C[0] = 1.0
    S = np.zeros((_NJ, n))
    acc = np.zeros((_NJ, n))
    pmm = 1.0
    for m in range(l + 1):
        if m > 0:
            pmm *= math.sqrt((2.0 * m + 1.0) / (2.0 * m))
            C, S = _jmul_np(C, xj) - _jmul_np(S, yj), _jmul_np(C, yj) + _jmul_np(S, xj)
        if cc[m] == 0.0 and ss[m] == 0.0:
            continue
        q1 = np.zeros((_NJ, n))
        q1[0] = pmm
        if l > m:
            q0 = q1
            q1 = math.sqrt(2.0 * m + 3.0) * _jmul_np(zj, q0)
            for k in range(m + 2, l + 1):
                a = math.sqrt((2.0 * k + 1.0) * (2.0 * k - 1.0) / ((k - m) * (k + m)))
                b = math.sqrt((2.0 * k + 1.0) * (k + m - 1.0) * (k - m - 1.0)
                              / ((2.0 * k - 3.0) * (k + m) * (k - m)))
                q0, q1 = q1, a * _jmul_np(zj, q1) - b * _jmul_np(rj, q0)
        acc += _jmul_np(q1, cc[m] * C + ss[m] * S)
    return acc.T


def _unpack(J):
    F = J[:, 0].copy()
    G = J[:, 1:4].copy()
    H = np.empty((J.shape[0], 3, 3))
    H[:, 0, 0] = J[:, 4]
    H[:, 1, 1] = J[:, 5]
    H[:, 2, 2] = J[:, 6]
    H[:, 0, 1] = H[:, 1, 0] = J[:, 7]
    H[:, 0, 2] = H[:, 2, 0] = J[:, 8]
    H[:, 1, 2] = H[:, 2, 1] = J[:, 9]
    return F, G, H


def _euclid_jets(l, cc, ss, P):
    if _accel.backend() == "numba":
        J = _euclid_nb(l, cc, ss, P)
    else:
        J = _euclid_np(l, cc, ss, P)
    return _unpack(J)


# Along a meridian every order m contributes A_m(theta) Phi_m(phi) with
# A_m = q_m(cos theta) sin^m theta.  The six columns below are the per-m
# coefficients of f, f_theta, f_phi/sin, and the frame Hessian entries;
# Phi_m = cc cos m phi + ss sin m phi, Psi_m = ss cos m phi - cc sin m phi.
_NCOL = 6


@_accel.njit
def _col(l, m, pmm, z, s, sm, out):
    q1 = pmm
    d1 = 0.0
    e1 = 0.0
    if l > m:
        q0, d0, e0 = q1, 0.0, 0.0
        f = math.sqrt(2.0 * m + 3.0)
        q1 = f * z * q0
        d1 = f * q0
        e1 = 0.0
        for n in range(m + 2, l + 1):
            a = math.sqrt((2.0 * n + 1.0) * (2.0 * n - 1.0) / ((n - m) * (n + m)))
            b = math.sqrt((2.0 * n + 1.0) * (n + m - 1.0) * (n - m - 1.0)
                          / ((2.0 * n - 3.0) * (n + m) * (n - m)))
            q2 = a * z * q1 - b * q0
            d2 = a * (q1 + z * d1) - b * d0
            e2 = a * (2.0 * d1 + z * e1) - b * e0
            q0, d0, e0 = q1, d1, e1
            q1, d1, e1 = q2, d2, e2
    s1 = sm / s if m >= 1 else 0.0
    s2 = sm / (s * s) if m >= 1 else 0.0
    out[0] = q1 * sm
    out[1] = -d1 * sm * s + m * z * q1 * s1
    out[2] = m * q1 * s1
    out[3] = e1 * sm * s * s - (2 * m + 1) * z * d1 * sm - m * q1 * sm + m * (m - 1) * z * z * q1 * s2
    out[4] = m * (-d1 * sm + (m - 1) * z * q1 * s2)
    out[5] = m * (1 - m) * q1 * s2 - m * q1 * sm - z * d1 * sm


@_accel.njit
def _cols_nb(l, z, s):
    n = z.shape[0]
    out = np.zeros((_NCOL, n, l + 1))
    buf = np.empty(_NCOL)
    for i in range(n):
        pmm = 1.0
        sm = 1.0
        for m in range(l + 1):
            if m > 0:
                pmm *= math.sqrt((2.0 * m + 1.0) / (2.0 * m))
                sm *= s[i]
            _col(l, m, pmm, z[i], s[i], sm, buf)
            for k in range(_NCOL):
                out[k, i, m] = buf[k]
    return out


@_accel.njit
def _sph_nb(l, cc, ss, th, ph):
    n = th.shape[0]
    out = np.zeros((n, _NCOL))
    buf = np.empty(_NCOL)
    for i in range(n):
        z = math.cos(th[i])
        s = math.sin(th[i])
        pmm = 1.0
        sm = 1.0
        for m in range(l + 1):
            if m > 0:
                pmm *= math.sqrt((2.0 * m + 1.0) / (2.0 * m))
                sm *= s
            if cc[m] == 0.0 and ss[m] == 0.0:
                continue
            _col(l, m, pmm, z, s, sm, buf)
            c = math.cos(m * ph[i])
            sn = math.sin(m * ph[i])
            Phi = cc[m] * c + ss[m] * sn
            Psi = ss[m] * c - cc[m] * sn
            out[i, 0] += buf[0] * Phi
            out[i, 1] += buf[1] * Phi
            out[i, 2] += buf[2] * Psi
            out[i, 3] += buf[3] * Phi
            out[i, 4] += buf[4] * Psi
            out[i, 5] += buf[5] * Phi
    return out


def _cols_np(l, z, s):
    n = z.shape[0]
    out = np.zeros((_NCOL, n, l + 1))
    pmm = 1.0
    sm = np.ones(n)
    for m in range(l + 1):
        if m > 0:
            pmm *= math.sqrt((2.0 * m + 1.0) / (2.0 * m))
            sm = sm * s
        q1, d1, e1 = np.full(n, pmm), np.zeros(n), np.zeros(n)
        if l > m:
            q0, d0, e0 = q1, d1, e1
            f = math.sqrt(2.0 * m + 3.0)
            q1, d1 = f * z * q0, f * q0
            for k in range(m + 2, l + 1):
                a = math.sqrt((2.0 * k + 1.0) * (2.0 * k - 1.0) / ((k - m) * (k + m)))
                b = math.sqrt((2.0 * k + 1.0) * (k + m - 1.0) * (k - m - 1.0)
                              / ((2.0 * k - 3.0) * (k + m) * (k - m)))
                q0, d0, e0, q1, d1, e1 = (q1, d1, e1, a * z * q1 - b * q0,
                                          a * (q1 + z * d1) - b * d0,
                                          a * (2.0 * d1 + z * e1) - b * e0)
        s1 = sm / s if m >= 1 else np.zeros(n)
        s2 = sm / (s * s) if m >= 1 else np.zeros(n)
        out[0, :, m] = q1 * sm
        out[1, :, m] = -d1 * sm * s + m * z * q1 * s1
        out[2, :, m] = m * q1 * s1
        out[3, :, m] = e1 * sm * s * s - (2 * m + 1) * z * d1 * sm - m * q1 * sm + m * (m - 1) * z * z * q1 * s2
        out[4, :, m] = m * (-d1 * sm + (m - 1) * z * q1 * s2)
        out[5, :, m] = m * (1 - m) * q1 * s2 - m * q1 * sm - z * d1 * sm
    return out


def _sph_np(l, cc, ss, th, ph):
    cols = _cols_np(l, np.cos(th), np.sin(th))
    mp = np.arange(l + 1)[None, :] * ph[:, None]
    c, sn = np.cos(mp), np.sin(mp)
    Phi = cc * c + ss * sn
    Psi = ss * c - cc * sn
    w = [Phi, Phi, Psi, Phi, Psi, Phi]
    return np.stack([np.sum(cols[k] * w[k], axis=1) for k in range(_NCOL)], axis=1)


def _sph(field, th, ph):
    """(f, g_theta, g_phi, h11, h12, h22) in the frame (e_theta, e_phi)."""
    th = np.ascontiguousarray(th, dtype=float)
    ph = np.ascontiguousarray(ph, dtype=float)
    if _accel.backend() == "numba":
        return _sph_nb(field.degree, field._cc, field._ss, th, ph)
    return _sph_np(field.degree, field._cc, field._ss, th, ph)


def grid_jets(field: HarmonicField, theta, phi):
    """Frame jets on the tensor grid theta x phi, each of shape (nt, np)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if field.rotation is not None:
        T, Ph = np.meshgrid(theta, phi, indexing="ij")
        J = _frame_jets_3d(field, T.ravel(), Ph.ravel())
        return tuple(c.reshape(T.shape) for c in J)
    if _accel.backend() == "numba":
        cols = _cols_nb(field.degree, np.cos(theta), np.sin(theta))
    else:
        cols = _cols_np(field.degree, np.cos(theta), np.sin(theta))
    m = np.arange(field.degree + 1)[:, None]
    Cos, Sin = np.cos(m * phi), np.sin(m * phi)
    cc, ss = field._cc[:, None], field._ss[:, None]
    Phi = cc * Cos + ss * Sin
    Psi = ss * Cos - cc * Sin
    w = [Phi, Phi, Psi, Phi, Psi, Phi]
    return tuple(cols[k] @ w[k] for k in range(_NCOL))


def _frame_jets_3d(field, th, ph):
    st = np.sin(th)
    P = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], -1)
    F, G, H = field.euclid_jets(P)
    e_t, e_p = _frame(th, ph)
    lf = field.degree * F
    He_t = np.einsum("nij,nj->ni", H, e_t)
    He_p = np.einsum("nij,nj->ni", H, e_p)
    return (F, np.sum(e_t * G, 1), np.sum(e_p * G, 1), np.sum(e_t * He_t, 1) - lf,
            np.sum(e_t * He_p, 1), np.sum(e_p * He_p, 1) - lf)


# ---------------------------------------------------------------- sphere jets

def _frame(theta, phi):
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    e_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_p = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    return e_t, e_p


# the rotated chart swaps the roles of the z and x axes
_CHART_R = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])


def _chart_frame(p, chart):
    if chart == "standard":
        sp = SpherePoint.from_xyz(p)
        return _frame(sp.theta, sp.phi_lon)
    q = _CHART_R @ p
    sq = SpherePoint.from_xyz(q)
    e_t, e_p = _frame(sq.theta, sq.phi_lon)
    return _CHART_R.T @ e_t, _CHART_R.T @ e_p


def sphere_jet(field: HarmonicField, p, e1, e2) -> Jet2:
    F, G, H = field.euclid_jets(np.asarray(p, dtype=float)[None, :])
    E = np.stack([e1, e2])
    grad = E @ G[0]
    hess = E @ H[0] @ E.T - field.degree * F[0] * np.eye(2)
    return Jet2(float(F[0]), grad, 0.5 * (hess + hess.T))


def eval_jet(field: HarmonicField, p: SpherePoint, chart: str = "standard",
             pole_guard: float = POLE_GUARD) -> Jet2:
    """Value, gradient and covariant Hessian in the frame (d_theta, d_phi / sin theta).

    ``chart="rotated"`` uses the second chart whose poles sit on the x axis;
    ``chart="auto"`` picks it inside the polar caps.
    """
    th = p.theta
    near_pole = th < pole_guard or math.pi - th < pole_guard
    if chart == "auto":
        chart = "rotated" if near_pole else "standard"
    if chart == "standard" and near_pole:
        raise PoleProximityError(f"theta={th:.3g} is within the pole guard {pole_guard}")
    if chart not in ("standard", "rotated"):
        raise DomainError(f"unknown chart {chart!r}")
    x = p.xyz()
    e1, e2 = _chart_frame(x, chart)
    j = sphere_jet(field, x, e1, e2)
    return Jet2(j.value, j.grad, j.hess, chart)


# ---------------------------------------------------------------- critical points

def _tangent_basis(P):
    # any orthonormal tangent basis, regular everywhere
    idx = np.argmin(np.abs(P), axis=1)
    A = np.zeros_like(P)
    A[np.arange(P.shape[0]), idx] = 1.0
    e1 = np.cross(A, P)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(P, e1)
    return e1, e2


def _tangent_jets(field, P):
    """Jets at unit vectors P in some orthonormal tangent frame (e1, e2).

    Away from the poles the frame is (e_theta, e_phi) and the cheap
    meridian recurrences are used; inside the pole guard, and for rotated
    fields, the Euclidean jets are projected instead.
    """
    n = P.shape[0]
    F = np.empty(n)
    g = np.empty((n, 2))
    h11, h12, h22 = np.empty(n), np.empty(n), np.empty(n)
    e1, e2 = np.empty((n, 3)), np.empty((n, 3))
    s = np.hypot(P[:, 0], P[:, 1])
    sph = s >= POLE_GUARD if field.rotation is None else np.zeros(n, dtype=bool)
    if sph.any():
        th = np.arctan2(s[sph], P[sph, 2])
        ph = np.arctan2(P[sph, 1], P[sph, 0])
        J = _sph(field, th, ph)
        F[sph], g[sph, 0], g[sph, 1] = J[:, 0], J[:, 1], J[:, 2]
        h11[sph], h12[sph], h22[sph] = J[:, 3], J[:, 4], J[:, 5]
        e1[sph], e2[sph] = _frame(th, ph)
    rest = ~sph
    if rest.any():
        Pr = P[rest]
        Fr, G, H = field.euclid_jets(Pr)
        b1, b2 = _tangent_basis(Pr)
        F[rest] = Fr
        g[rest, 0], g[rest, 1] = np.sum(b1 * G, 1), np.sum(b2 * G, 1)
        Hb1 = np.einsum("nij,nj->ni", H, b1)
        Hb2 = np.einsum("nij,nj->ni", H, b2)
        h11[rest] = np.sum(b1 * Hb1, 1) - field.degree * Fr
        h22[rest] = np.sum(b2 * Hb2, 1) - field.degree * Fr
        h12[rest] = np.sum(b1 * Hb2, 1)
        e1[rest], e2[rest] = b1, b2
    return F, g, h11, h12, h22, e1, e2


def _newton_step(g, h11, h12, h22):
    det = h11 * h22 - h12 * h12
    safe = np.where(np.abs(det) > 1e-300, det, 1e-300)
    v1 = -(h22 * g[..., 0] - h12 * g[..., 1]) / safe
    v2 = -(-h12 * g[..., 0] + h11 * g[..., 1]) / safe
    return v1, v2, det


def _newton(field, P0, tol, max_steps, max_step, keep_sign=True):
    """Batch damped Newton on grad f = 0 with geodesic updates.

    A step is accepted only if it lowers |grad f| and keeps the sign of
    det Hess, so a seed stays on its own side of the fold curve det = 0
    and converges to a critical point of its own type.
    """
    P = P0 / np.linalg.norm(P0, axis=1)[:, None]
    n = P.shape[0]
    done = np.zeros(n, dtype=bool)
    res = np.full(n, np.inf)
    stall = np.zeros(n, dtype=int)
    active = np.arange(n)
    _, g, h11, h12, h22, e1, e2 = _tangent_jets(field, P)
    gn = np.linalg.norm(g, axis=1)
    sign0 = np.sign(h11 * h22 - h12 * h12)
    for _ in range(max_steps):
        res[active] = gn
        # polish well below tol; points that stall at the rounding floor still count
        ok = gn <= 1e-3 * tol
        stuck = stall[active] >= 4
        done[active[ok | (stuck & (gn <= tol))]] = True
        # seeds parked at a nonzero minimum of |grad| are abandoned
        keep = ~ok & ~stuck
        active, g, gn = active[keep], g[keep], gn[keep]
        h11, h12, h22, e1, e2 = h11[keep], h12[keep], h22[keep], e1[keep], e2[keep]
        if active.size == 0:
            break
        Pa = P[active]
        v1, v2, _ = _newton_step(g, h11, h12, h22)
        full = np.hypot(v1, v2)
        step = np.minimum(full, max_step)
        d = (v1[:, None] * e1 + v2[:, None] * e2) / np.maximum(full, 1e-300)[:, None]
        pending = np.arange(active.size)
        Pn = Pa.copy()
        new = [None] * 7
        for half in range(8):
            Pc = np.cos(step[pending])[:, None] * Pa[pending] + np.sin(step[pending])[:, None] * d[pending]
            Pc /= np.linalg.norm(Pc, axis=1)[:, None]
            J = _tangent_jets(field, Pc)
            gnc = np.linalg.norm(J[1], axis=1)
            detc = J[2] * J[4] - J[3] * J[3]
            same = np.sign(detc) == sign0[active[pending]] if keep_sign else True
            accept = ((gnc <= gn[pending]) & same) | (half == 7)
            idx = pending[accept]
            Pn[idx] = Pc[accept]
            for k in range(7):
                if new[k] is None:
                    new[k] = np.empty((active.size,) + J[k].shape[1:])
                new[k][idx] = J[k][accept]
            pending = pending[~accept]
            if pending.size == 0:
                break
            step[pending] *= 0.5
        P[active] = Pn
        _, g, h11, h12, h22, e1, e2 = new
        gn_new = np.linalg.norm(g, axis=1)
        stall[active] = np.where(gn_new > 0.5 * gn, stall[active] + 1, 0)
        gn = gn_new
    else:
        res[active] = gn
        done[active[gn <= tol]] = True
    return P, done, res


def _grid(l, gpw):
    h = (2 * math.pi / l) / (gpw * SEED_OVERSAMPLE)
    nt = max(4, math.ceil(math.pi / h))
    npx = max(8, math.ceil(2 * math.pi / h))
    th = (np.arange(nt) + 0.5) * math.pi / nt
    ph = np.arange(npx) * 2 * math.pi / npx
    return th, ph, h


def _seeds(field, gpw, reach=SEED_REACH):
    """Newton predictions from every grid node that land within ``reach`` spacings."""
    th, ph, h = _grid(field.degree, gpw)
    T, Ph = np.meshgrid(th, ph, indexing="ij")
    _, gt, gp, h11, h12, h22 = grid_jets(field, th, ph)
    v1, v2, _ = _newton_step(np.stack([gt, gp], -1), h11, h12, h22)
    size = np.hypot(v1, v2)
    pick = size <= reach * h
    th, ph, v1, v2, size = T[pick], Ph[pick], v1[pick], v2[pick], size[pick]
    e_t, e_p = _frame(th, ph)
    st = np.sin(th)
    P = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], -1)
    d = (v1[:, None] * e_t + v2[:, None] * e_p) / np.maximum(size, 1e-300)[:, None]
    return np.cos(size)[:, None] * P + np.sin(size)[:, None] * d, h


def _dedup(P, radius):
    if len(P) == 0:
        return P
    tree = cKDTree(P)
    pairs = tree.query_pairs(2 * math.sin(radius / 2))
    parent = np.arange(len(P))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(pairs):
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    keep = sorted({root(i) for i in range(len(P))})
    return P[keep]


class DegenerateSampleError(IntegrityError):
    pass


def _locate(field, gpw, newton_tol, dedup_radius):
    l = field.degree
    seeds, h = _seeds(field, gpw)
    tol = newton_tol * field.lam
    P, done, res = _newton(field, seeds, tol, MAX_NEWTON, max_step=0.5 * h)
    failures = int((~done).sum())
    P = _dedup(P[done], dedup_radius)
    F, g, h11, h12, h22, _, _ = _tangent_jets(field, P) if len(P) else (np.zeros(0),) * 7
    det = h11 * h22 - h12 * h12 if len(P) else np.zeros(0)
    tr = h11 + h22 if len(P) else np.zeros(0)
    if len(P) and np.min(np.abs(det)) < DEGENERATE_DET * field.lam ** 2:
        raise DegenerateSampleError("critical point with vanishing Hessian determinant")
    kinds = np.where(det < 0, "saddle", np.where(tr < 0, "max", "min"))
    quality = float(np.max(np.linalg.norm(g, axis=1))) if len(P) else 0.0
    pts = [CriticalPoint(SpherePoint.from_xyz(p), float(f), str(k)) for p, f, k in zip(P, F, kinds)]
    return pts, failures, quality


def find_critical(field: HarmonicField, grid_per_wavelength: int = GRID_PER_WAVELENGTH,
                  newton_tol: float = NEWTON_TOL, dedup_radius: Optional[float] = None,
                  retry: bool = True, strict: bool = True) -> CriticalSet:
    """Locate and classify all critical points of ``field``.

    Every node of a lat-lon grid proposes one Newton step; landings within
    reach of their node become seeds, refined by damped Newton in the
    tangent plane and merged within ``dedup_radius``.
    A Morse or Euler violation triggers one retry on a doubled grid and then
    an IntegrityError, or with ``strict=False`` a set flagged ``morse_ok=False``.
    """
    if grid_per_wavelength < 3:
        raise DomainError("grid_per_wavelength must be >= 3")
    l = field.degree
    radius = 1e-3 / l if dedup_radius is None else dedup_radius
    gpw = grid_per_wavelength
    attempts = 2 if retry else 1
    for attempt in range(attempts):
        pts, failures, quality = _locate(field, gpw, newton_tol, radius)
        n_max = sum(p.kind == "max" for p in pts)
        n_min = sum(p.kind == "min" for p in pts)
        n_s = sum(p.kind == "saddle" for p in pts)
        n_e = n_max + n_min
        n_c = n_e + n_s
        if 2 * n_e == n_c + 2:
            return CriticalSet(pts, (n_c, n_e, n_s), quality, n_max, n_min, failures, gpw)
        gpw *= 2
    if not strict:
        return CriticalSet(pts, (n_c, n_e, n_s), quality, n_max, n_min, failures, gpw // 2, False)
    raise IntegrityError(f"Morse relation violated: N^c={n_c}, N^e={n_e}, N^s={n_s} (l={l})")


def count_in_interval(cs: CriticalSet, interval, kind: str = "c") -> int:
    """Number of critical points of a kind ("c", "e", "s") with value in [a, b]."""
    if kind not in ("c", "e", "s"):
        raise DomainError("kind must be 'c', 'e' or 's'")
    if interval is None:
        a, b = -math.inf, math.inf
    else:
        a, b = interval
    if b < a:
        return 0
    want = {"c": ("max", "min", "saddle"), "e": ("max", "min"), "s": ("saddle",)}[kind]
    return sum(1 for p in cs.points if p.kind in want and a <= p.value <= b)


# ---------------------------------------------------------------- simulation

class SampleRow(NamedTuple):
    seed: int
    n_c: int
    n_e: int
    n_s: int
    n_interval: Optional[int]
    resampled: int
    morse_ok: bool


def simulate_one(l: int, seed: int, interval=None, kind: str = "c",
                 grid_per_wavelength: int = GRID_PER_WAVELENGTH) -> SampleRow:
    """Counts for one field; degenerate samples are redrawn from a derived seed."""
    resampled = 0
    cur = seed
    while True:
        try:
            cs = find_critical(sample(l, cur), grid_per_wavelength, strict=False)
            break
        except DegenerateSampleError:
            resampled += 1
            cur = sample_seeds(cur, 1)[0]
    ni = count_in_interval(cs, interval, kind) if interval is not None else None
    return SampleRow(seed, cs.n_c, cs.n_e, cs.n_s, ni, resampled, cs.morse_ok)


def simulate(l: int, n_samples: int, seed: int, interval=None, kind: str = "c",
             grid_per_wavelength: int = GRID_PER_WAVELENGTH, threads: int = 1):
    """Critical-point counts for ``n_samples`` independent fields, in seed order."""
    seeds = sample_seeds(seed, n_samples)

    def one(s):
        return simulate_one(l, s, interval, kind, grid_per_wavelength)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, seeds))
    return [one(s) for s in seeds]


# ---------------------------------------------------------------- epsilon net

def _fibonacci(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    ph = math.pi * (1 + math.sqrt(5)) * i
    return np.stack([r * np.cos(ph), r * np.sin(ph), z], axis=1)


def _greedy(cand, chord, chosen):
    """Append to ``chosen`` every candidate farther than ``chord`` from all chosen points."""
    tree = cKDTree(np.array(chosen)) if chosen else None
    pending = []
    for p in cand:
        if tree is not None and tree.query_ball_point(p, chord, return_length=True) > 0:
            continue
        if pending and np.min(np.linalg.norm(np.array(pending) - p, axis=1)) <= chord:
            continue
        pending.append(p)
        if len(pending) >= 256:
            chosen.extend(pending)
            tree = cKDTree(np.array(chosen))
            pending = []
    chosen.extend(pending)
    return chosen


def epsilon_net(eps: float, refine: int = 5) -> List[SpherePoint]:
    """Maximal eps-separated set: greedy over a fine lattice, then a covering pass.

    Pairwise geodesic distances exceed ``eps``.  The covering pass re-runs
    the greedy rule over a second, denser lattice, so every point of it is
    within eps of the returned set.
    """
    if not 0 < eps < math.pi / 4:
        raise DomainError("eps must lie in (0, pi/4)")
    n = int(math.ceil(4 * math.pi * refine ** 2 / eps ** 2))
    chord = 2 * math.sin(eps / 2)
    chosen = _greedy(_fibonacci(n), chord, [])
    probe = _fibonacci(4 * n + 1)
    far = cKDTree(np.array(chosen)).query(probe)[0] > chord
    chosen = _greedy(probe[far], chord, chosen)
    return [SpherePoint.from_xyz(p) for p in chosen]
