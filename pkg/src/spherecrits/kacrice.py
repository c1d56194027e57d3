"""Two-point Kac-Rice machinery.

q(a) = E |z1 z3 - z2^2| |w1 w3 - w2^2| for (z, w) ~ N(0, Delta(a)) is the
core quantity.  Three estimators are provided:

* ``plain``: Monte Carlo with a Cholesky factor of Delta(a);
* ``reweight``: draws from N(0, U) reweighted by the density ratio, which
  turns finite differences in ``a`` into smooth likelihood-ratio sums;
* ``q_cf``: deterministic quadrature of a characteristic-function
  representation, used as the noise-free engine for long integrals.

Random streams come from ``SeedSequence(seed).spawn`` with one child per
fixed-size chunk, so estimates do not depend on the thread count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional

import numpy as np

from . import _accel, covariance, gaussmoments
from .errors import BudgetExceededError, DegenerateGeometryError, DomainError, NotPSDError

CHUNK = 1 << 16
DEFAULT_C = 6.0
MC_BUDGET = 4e9

# index sets kept in the Taylor reconstruction, with their q-derivative names
TAYLOR_TERMS = {
    (3,): "d3",
    (3, 3): "d33",
    (7, 7): "d77",
    (3, 7, 7): "d377",
    (7, 7, 7, 7): "d7777",
}


class McConfig(NamedTuple):
    samples: int = 1_000_000
    seed: int = 0
    antithetic: bool = False


class QuadConfig(NamedTuple):
    nodes_per_period: int = 40
    gauss_order: int = 10


class Estimate(NamedTuple):
    value: float
    standard_error: float
    samples: int = 0


class KernelPoint(NamedTuple):
    phi: float
    k2: float
    standard_error: float
    degenerate: bool


# ---------------------------------------------------------------- sampling

def _chunks(cfg):
    n = int(cfg.samples)
    if n < 1:
        raise DomainError("samples must be positive")
    if cfg.antithetic:
        n = (n + 1) // 2
    sizes = [CHUNK] * (n // CHUNK)
    if n % CHUNK:
        sizes.append(n % CHUNK)
    children = np.random.SeedSequence(int(cfg.seed)).spawn(len(sizes))
    return list(zip(children, sizes))


def _normals(child, size, dim):
    return np.random.Generator(np.random.PCG64(child)).standard_normal((size, dim))


def _map_chunks(fn, cfg, dim, threads=1):
    """Apply ``fn(X)`` to each chunk of normals; return the per-chunk outputs in order."""
    jobs = _chunks(cfg)

    def run(job):
        X = _normals(job[0], job[1], dim)
        if cfg.antithetic:
            return fn(X, antithetic=True)
        return fn(X)

    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(run, jobs))
    return [run(j) for j in jobs]


def _finish(parts, n_eff):
    s = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    mean = s / n_eff
    var = np.maximum(s2 / n_eff - mean * mean, 0.0) * n_eff / max(n_eff - 1, 1)
    return mean, np.sqrt(var / n_eff)


def _n_eff(cfg):
    n = int(cfg.samples)
    return (n + 1) // 2 if cfg.antithetic else n


# ---------------------------------------------------------------- kernels

@_accel.njit
def _g6(y, sgn):
    y0, y1, y2 = sgn * y[0], sgn * y[1], sgn * y[2]
    y3, y4, y5 = sgn * y[3], sgn * y[4], sgn * y[5]
    return abs(y0 * y2 - y1 * y1) * abs(y3 * y5 - y4 * y4)


def _g6_np(Y):
    return np.abs(Y[:, 0] * Y[:, 2] - Y[:, 1] ** 2) * np.abs(Y[:, 3] * Y[:, 5] - Y[:, 4] ** 2)


@_accel.njit
def _detprod_nb(X, F, anti):
    s = 0.0
    s2 = 0.0
    y = np.empty(6)
    for k in range(X.shape[0]):
        for i in range(6):
            acc = 0.0
            for j in range(i + 1):
                acc += F[i, j] * X[k, j]
            y[i] = acc
        g = _g6(y, 1.0)
        if anti:
            g = 0.5 * (g + _g6(y, -1.0))
        s += g
        s2 += g * g
    return s, s2


def _detprod_np(X, F, anti):
    Y = X @ F.T
    g = _g6_np(Y)
    if anti:
        g = 0.5 * (g + _g6_np(-Y))
    return float(g.sum()), float((g * g).sum())


@_accel.njit
def _reweight_nb(X, FU, B, c, coef, anti, kappa, Uinv):
    # B: (K, 6, 6) halves of (Delta_k^{-1} - U^{-1}); c: (K,) log normalisers;
    # draws come from N(0, kappa U), so each sample also carries N(U)/N(kappa U)
    K = B.shape[0]
    J = coef.shape[0]
    s = np.zeros(J)
    s2 = np.zeros(J)
    y = np.empty(6)
    e = np.empty(K)
    v = np.empty(J)
    csum = np.zeros(J)
    for jj in range(J):
        for kk in range(K):
            csum[jj] += coef[jj, kk]
    npass = 2 if anti else 1
    for n in range(X.shape[0]):
        for jj in range(J):
            v[jj] = 0.0
        for p in range(npass):
            sgn = 1.0 if p == 0 else -1.0
            for i in range(6):
                acc = 0.0
                for j in range(i + 1):
                    acc += FU[i, j] * X[n, j]
                y[i] = sgn * acc
            g = _g6(y, 1.0)
            if kappa != 1.0:
                qu = 0.0
                for i in range(6):
                    for j in range(6):
                        qu += y[i] * Uinv[i, j] * y[j]
                g *= kappa ** 3 * math.exp(-0.5 * (1.0 - 1.0 / kappa) * qu)
            for kk in range(K):
                quad = 0.0
                for i in range(6):
                    row = 0.0
                    for j in range(6):
                        row += B[kk, i, j] * y[j]
                    quad += y[i] * row
                e[kk] = math.expm1(c[kk] - quad)
            for jj in range(J):
                acc = csum[jj]
                for kk in range(K):
                    acc += coef[jj, kk] * e[kk]
                v[jj] += g * acc / npass
        for jj in range(J):
            s[jj] += v[jj]
            s2[jj] += v[jj] * v[jj]
    return s, s2


def _reweight_np(X, FU, B, c, coef, anti, kappa, Uinv):
    v = 0.0
    signs = (1.0, -1.0) if anti else (1.0,)
    for sgn in signs:
        Y = sgn * (X @ FU.T)
        g = _g6_np(Y)
        if kappa != 1.0:
            qu = np.einsum("ni,ij,nj->n", Y, Uinv, Y)
            g = g * kappa ** 3 * np.exp(-0.5 * (1 - 1 / kappa) * qu)
        quad = np.einsum("ni,kij,nj->nk", Y, B, Y)
        e = np.expm1(c[None, :] - quad)
        comb = coef.sum(axis=1)[None, :] + e @ coef.T
        v = v + g[:, None] * comb / len(signs)
    return v.sum(axis=0), (v * v).sum(axis=0)


@_accel.njit
def _integrated_nb(X, Fs, W, anti):
    # per-sample weighted sum over quadrature nodes, so the SE sees the CRN correlation
    s = 0.0
    s2 = 0.0
    y = np.empty(6)
    for n in range(X.shape[0]):
        G = 0.0
        for k in range(Fs.shape[0]):
            for i in range(6):
                acc = 0.0
                for j in range(i + 1):
                    acc += Fs[k, i, j] * X[n, j]
                y[i] = acc
            g = _g6(y, 1.0)
            if anti:
                g = 0.5 * (g + _g6(y, -1.0))
            G += W[k] * g
        s += G
        s2 += G * G
    return s, s2


def _integrated_np(X, Fs, W, anti):
    G = np.zeros(X.shape[0])
    for k in range(Fs.shape[0]):
        Y = X @ Fs[k].T
        g = _g6_np(Y)
        if anti:
            g = 0.5 * (g + _g6_np(-Y))
        G += W[k] * g
    return float(G.sum()), float((G * G).sum())


def _pick(nb, np_):
    return nb if _accel.backend() == "numba" else np_


# ---------------------------------------------------------------- factorization

def factor(M):
    """Lower-triangular-or-square factor F with F F^T = M (Cholesky, eigen fallback)."""
    M = 0.5 * (M + M.T)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(M)
        if w[0] < -covariance.PSD_TOL * np.trace(M):
            raise NotPSDError(f"covariance is not PSD (min eigenvalue {w[0]:.3e})") from None
        return V * np.sqrt(np.clip(w, 0.0, None))


def _factor_lower(M):
    F = factor(M)
    if np.allclose(F, np.tril(F)):
        return np.ascontiguousarray(F)
    # kernels assume a lower-triangular factor; QR turns any factor into one
    R = np.linalg.qr(F.T, mode="r")
    L = R.T
    L = L * np.sign(np.where(np.diag(L) == 0, 1.0, np.diag(L)))[None, :]
    return np.ascontiguousarray(L)


def _delta(a):
    if isinstance(a, covariance.ConditionalCovariance):
        return a.assembled
    return covariance.require_psd(np.asarray(a, dtype=float).reshape(8))


# ---------------------------------------------------------------- q(a)

def q_of_a(a, cfg: McConfig = McConfig(), estimator: str = "plain", threads: int = 1,
           spread: float = 1.0) -> Estimate:
    """Monte Carlo estimate of q(a) with its standard error.

    ``spread`` only affects the reweight estimator (proposal N(0, spread U)).
    """
    D = _delta(a)
    n_eff = _n_eff(cfg)
    if estimator == "plain":
        F = _factor_lower(D)
        kern = _pick(_detprod_nb, _detprod_np)
        parts = _map_chunks(lambda X, antithetic=False: kern(X, F, antithetic), cfg, 6, threads)
        m, se = _finish(parts, n_eff)
        return Estimate(float(m), float(se), int(cfg.samples))
    if estimator == "reweight":
        est = q_stencil(np.asarray(a, dtype=float).reshape(1, 8), np.ones((1, 1)), cfg, threads, spread)
        return est[0]
    raise DomainError(f"unknown estimator {estimator!r}")


def q_stencil(points, coef, cfg: McConfig = McConfig(), threads: int = 1, spread: float = 1.0):
    """Linear combinations sum_k coef[j, k] q(points[k]) from one shared sample.

    Draws come from N(0, spread * U) and are reweighted to each
    Delta(points[k]); the combinations are formed per sample, so their
    standard errors are exact even for high-order finite differences.  A
    spread above 1 keeps the polynomial likelihood-ratio weights of high
    differences light-tailed.
    """
    if not spread >= 1.0:
        raise DomainError("spread must be >= 1")
    P = np.atleast_2d(np.asarray(points, dtype=float))
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    if coef.shape[1] != P.shape[0]:
        raise DomainError("coef columns must match the number of points")
    Uinv = np.linalg.inv(covariance.U)
    _, ldU = np.linalg.slogdet(covariance.U)
    B = np.empty((P.shape[0], 6, 6))
    c = np.empty(P.shape[0])
    for k, a in enumerate(P):
        D = _delta(a)
        sign, ld = np.linalg.slogdet(D)
        if sign <= 0:
            raise NotPSDError("reweighting needs a positive definite Delta(a)")
        Dinv = np.linalg.inv(D)
        B[k] = 0.5 * (Dinv - Uinv)
        B[k] = 0.5 * (B[k] + B[k].T)
        c[k] = 0.5 * (ldU - ld)
    FU = np.ascontiguousarray(np.linalg.cholesky(spread * covariance.U))
    kern = _pick(_reweight_nb, _reweight_np)
    kappa = float(spread)
    parts = _map_chunks(lambda X, antithetic=False: kern(X, FU, B, c, coef, antithetic, kappa, Uinv),
                        cfg, 6, threads)
    m, se = _finish(parts, _n_eff(cfg))
    return [Estimate(float(m[j]), float(se[j]), int(cfg.samples)) for j in range(coef.shape[0])]


def _derivative_stencil(h):
    """Points in the (a3, a7) plane and coefficient rows for the five derivatives."""
    def pt(d3=0.0, d7=0.0):
        a = np.zeros(8)
        a[2] = d3
        a[6] = d7
        return a

    pts = [pt()]
    index = {(0, 0): 0}

    def col(i3, i7):
        if (i3, i7) not in index:
            index[(i3, i7)] = len(pts)
            pts.append(pt(i3 * h, i7 * h))
        return index[(i3, i7)]

    rows = {}

    def add(name, terms, scale):
        r = {}
        for (i3, i7), w in terms:
            k = col(i3, i7)
            r[k] = r.get(k, 0.0) + w * scale
        rows[name] = r

    add("d3", [((1, 0), 1), ((-1, 0), -1)], 1 / (2 * h))
    add("d77", [((0, 1), 1), ((0, 0), -2), ((0, -1), 1)], 1 / h ** 2)
    add("d33", [((1, 0), 1), ((0, 0), -2), ((-1, 0), 1)], 1 / h ** 2)
    add("d377", [((1, 1), 1), ((1, 0), -2), ((1, -1), 1),
                 ((-1, 1), -1), ((-1, 0), 2), ((-1, -1), -1)], 1 / (2 * h ** 3))
    add("d7777", [((0, 2), 1), ((0, 1), -4), ((0, 0), 6), ((0, -1), -4), ((0, -2), 1)], 1 / h ** 4)
    names = list(rows)
    coef = np.zeros((len(names), len(pts)))
    for j, name in enumerate(names):
        for k, w in rows[name].items():
            coef[j, k] = w
    return np.array(pts), coef, names


def q_derivatives_mc(cfg: McConfig = McConfig(samples=10_000_000), h: float = 1e-2, threads: int = 1,
                     spread: float = 2.0):
    """Central finite differences of q at a = 0 for the five tracked derivatives.

    Returns a dict name -> Estimate keyed like ``gaussmoments.QDerivatives``.
    """
    pts, coef, names = _derivative_stencil(h)
    est = q_stencil(pts, coef, cfg, threads, spread)
    return dict(zip(names, est))


def q_derivatives_cf(h: float = 0.05, nodes: int = 96):
    """The same stencils applied to the deterministic engine ``q_cf``."""
    pts, coef, names = _derivative_stencil(h)
    qs = np.array([q_cf(p, nodes) for p in pts])
    return dict(zip(names, (coef @ qs).tolist()))


def q_gradient_hessian_mc(cfg: McConfig = McConfig(samples=4_000_000), h: float = 2e-2,
                          threads: int = 1, spread: float = 2.0):
    """All first and second partial derivatives of q at a = 0.

    Keys are sorted 1-based index tuples, e.g. (2,), (2, 2), (1, 4).
    """
    import itertools

    pts = [np.zeros(8)]

    def new(v):
        pts.append(np.asarray(v, dtype=float))
        return len(pts) - 1

    rows = {}
    for i in range(8):
        e = np.zeros(8)
        e[i] = h
        ip, im = new(e), new(-e)
        rows[(i + 1,)] = {ip: 1 / (2 * h), im: -1 / (2 * h)}
        rows[(i + 1, i + 1)] = {ip: 1 / h ** 2, im: 1 / h ** 2, 0: -2 / h ** 2}
    for i, j in itertools.combinations(range(8), 2):
        e = np.zeros(8)
        e[i] = e[j] = h
        f = e.copy()
        f[j] = -h
        w = 1 / (4 * h * h)
        rows[(i + 1, j + 1)] = {new(e): w, new(-e): w, new(f): -w, new(-f): -w}
    names = list(rows)
    coef = np.zeros((len(names), len(pts)))
    for r, n in enumerate(names):
        for kk, w in rows[n].items():
            coef[r, kk] += w
    est = q_stencil(np.array(pts), coef, cfg, threads, spread)
    return dict(zip(names, est))


# ---------------------------------------------------------------- deterministic q

_IX4 = [0, 2, 3, 5]
_IX2 = [1, 4]
_M1_4 = np.zeros((4, 4))
_M1_4[0, 1] = _M1_4[1, 0] = 0.5
_M2_4 = np.zeros((4, 4))
_M2_4[2, 3] = _M2_4[3, 2] = 0.5
_M1_2 = np.diag([-1.0, 0.0])
_M2_2 = np.diag([0.0, -1.0])


def _sym_sqrt(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _log_cf(mu):
    # log E exp(i x^T M x) for x ~ N(0, I) in terms of eigenvalues of M
    return -0.5 * np.sum(np.log1p(-2j * mu), axis=-1)


def _eig2(p, q, r):
    m = 0.5 * (p + r)
    d = np.sqrt((0.5 * (p - r)) ** 2 + q * q)
    return np.stack([m - d, m + d], axis=-1)


def q_cf(a, nodes: int = 96) -> float:
    """Deterministic q(a) from the characteristic function of (Q1, Q2).

    Uses |x| = (2/pi) int_0^inf (1 - cos tx)/t^2 dt in both variables and
    the Gaussian quadratic-form characteristic function.  (z2, w2) decouple
    from (z1, z3, w1, w3), so the 6x6 problem splits into 4x4 and 2x2 blocks.
    """
    D = _delta(a)
    S4 = _sym_sqrt(D[np.ix_(_IX4, _IX4)])
    S2 = _sym_sqrt(D[np.ix_(_IX2, _IX2)])
    A1, A2 = S4 @ _M1_4 @ S4, S4 @ _M2_4 @ S4
    B1, B2 = S2 @ _M1_2 @ S2, S2 @ _M2_2 @ S2

    x, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (x + 1)
    t = np.tan(0.5 * math.pi * u)
    wt = 0.5 * w * 0.5 * math.pi * (1 + t * t) / (t * t)

    def logcf(tt, ss):
        M4 = tt[..., None, None] * A1 + ss[..., None, None] * A2
        M2 = tt[..., None, None] * B1 + ss[..., None, None] * B2
        mu4 = np.linalg.eigvalsh(M4)
        mu2 = _eig2(M2[..., 0, 0], M2[..., 0, 1], M2[..., 1, 1])
        return _log_cf(mu4) + _log_cf(mu2)

    zero = np.zeros_like(t)
    Et = np.expm1(logcf(t, zero))
    Es = np.expm1(logcf(zero, t))
    T, S = np.meshgrid(t, t, indexing="ij")
    Ep = np.expm1(logcf(T, S))
    Em = np.expm1(logcf(T, -S))
    Bts = (-Et[:, None] - Es[None, :] + 0.5 * Ep + 0.5 * Em).real
    return float(4 / math.pi ** 2 * (wt @ Bts @ wt))


# ---------------------------------------------------------------- restricted q

def q_of_a_restricted(a, t1: float, t2: float, cfg: McConfig = McConfig(), threads: int = 1) -> Estimate:
    """Value-restricted q(a; t1, t2) by importance sampling.

    The integrand over (z1, z2, w1, w2) is evaluated literally, with the full
    Delta(a)^{-1} quadratic form and (2 pi)^{-3} det^{-1/2} prefactor, and
    divided by the density of the Gaussian proposal.  The proposal is the
    conditional law of (z1, z2, w1, w2) given z1 + z3 = sqrt8 t1,
    w1 + w3 = sqrt8 t2.
    """
    D = _delta(a)
    sign, logdet = np.linalg.slogdet(D)
    if sign <= 0:
        raise NotPSDError("restricted q needs a nonsingular Delta(a)")
    Dinv = np.linalg.inv(D)
    r8 = math.sqrt(8.0)
    s = np.array([r8 * t1, r8 * t2])
    # v = T y + b maps (z1, z2, w1, w2) to the 6-vector on the hyperplane
    T = np.zeros((6, 4))
    T[0, 0] = 1
    T[1, 1] = 1
    T[2, 0] = -1
    T[3, 2] = 1
    T[4, 3] = 1
    T[5, 2] = -1
    b = np.array([0, 0, s[0], 0, 0, s[1]], dtype=float)
    # proposal: the Gaussian in y proportional to exp(-(T y + b)^T Dinv (T y + b)/2)
    P = T.T @ Dinv @ T
    Pinv = np.linalg.inv(P)
    mean = -Pinv @ (T.T @ Dinv @ b)
    F = np.linalg.cholesky(0.5 * (Pinv + Pinv.T))
    _, logdetPinv = np.linalg.slogdet(Pinv)
    log_pref = -3 * math.log(2 * math.pi) - 0.5 * logdet
    log_prop_norm = -2 * math.log(2 * math.pi) - 0.5 * logdetPinv

    def chunk(X, antithetic=False):
        vals = []
        for sgn in ((1.0, -1.0) if antithetic else (1.0,)):
            Z = sgn * X
            Y = mean[None, :] + Z @ F.T
            V = Y @ T.T + b[None, :]
            quad = np.einsum("ni,ij,nj->n", V, Dinv, V)
            log_target = log_pref - 0.5 * quad
            log_prop = log_prop_norm - 0.5 * np.einsum("ni,ni->n", Z, Z)
            g = np.abs(V[:, 0] * V[:, 2] - V[:, 1] ** 2) * np.abs(V[:, 3] * V[:, 5] - V[:, 4] ** 2)
            vals.append(g * np.exp(log_target - log_prop))
        v = np.mean(vals, axis=0)
        return float(v.sum()), float((v * v).sum())

    parts = _map_chunks(chunk, cfg, 4, threads)
    m, se = _finish(parts, _n_eff(cfg))
    return Estimate(float(m), float(se), int(cfg.samples))


# ---------------------------------------------------------------- kernel K2

def _prefactor(l, a1, a2):
    L = covariance.lam(l)
    return L ** 4 / 64 / (math.pi ** 2 * math.sqrt((L * L - 4 * a2 * a2) * (L * L - 4 * a1 * a1)))


def k2(l: int, phi: float, cfg: McConfig = McConfig(), engine: str = "mc", strict: bool = False,
       threads: int = 1) -> KernelPoint:
    """Two-point correlation K2 at geodesic distance ``phi``.

    Degenerate geometry (gradient covariance not positive definite, or
    Delta not PSD) is flagged; ``strict=True`` raises instead.
    """
    gc = covariance.gradient_cov(l, phi)
    if not gc.positive_definite:
        if strict:
            raise DegenerateGeometryError(f"gradient covariance degenerate at phi={phi}")
        return KernelPoint(float(phi), math.nan, math.nan, True)
    try:
        a = covariance.perturbation(l, phi)
        if engine == "cf":
            q, se = q_cf(a), 0.0
        elif engine == "mc":
            est = q_of_a(a, cfg, threads=threads)
            q, se = est.value, est.standard_error
        else:
            raise DomainError(f"unknown engine {engine!r}")
    except NotPSDError:
        if strict:
            raise
        return KernelPoint(float(phi), math.nan, math.nan, True)
    pref = _prefactor(l, gc.matrix[0, 2], gc.matrix[1, 3])
    return KernelPoint(float(phi), pref * q, pref * se, False)


def k2_curve(l: int, phis, cfg: McConfig = McConfig(), engine: str = "mc", threads: int = 1):
    """K2 on a grid; every point reuses the same normal draws (common random numbers)."""
    return [k2(l, float(p), cfg, engine, threads=threads) for p in np.asarray(phis, dtype=float)]


# ---------------------------------------------------------------- phi quadrature

def phi_nodes(l: int, C: float = DEFAULT_C, quad: QuadConfig = QuadConfig()):
    """Composite Gauss-Legendre nodes and weights on (C/l, pi - C/l)."""
    if l < 2:
        raise DomainError("l must be >= 2")
    if not C > 0:
        raise DegenerateGeometryError("C must be positive: phi = 0 is a degenerate endpoint")
    lo, hi = C / l, math.pi - C / l
    if hi <= lo:
        raise DegenerateGeometryError(f"empty range for C={C}, l={l}")
    period = 2 * math.pi / (l + 0.5)
    width = period * quad.gauss_order / quad.nodes_per_period
    npan = max(1, math.ceil((hi - lo) / width))
    edges = np.linspace(lo, hi, npan + 1)
    x, w = np.polynomial.legendre.leggauss(quad.gauss_order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _weight_and_a(l, nodes):
    L = covariance.lam(l)
    abg = covariance.abg_array(l, nodes)
    a1, a2 = abg[0], abg[1]
    g1 = 1 - 4 * a1 * a1 / (L * L)
    g2 = 1 - 4 * a2 * a2 / (L * L)
    if np.any(g1 <= covariance.GAP_TOL) or np.any(g2 <= covariance.GAP_TOL):
        bad = nodes[np.argmin(np.minimum(g1, g2))]
        raise DegenerateGeometryError(f"gradient covariance degenerate near phi={bad:.4g}")
    wphi = np.sin(nodes) / np.sqrt(g1 * g2)
    return wphi, covariance.perturbation_array(l, nodes)


def a_term_table(l: int, C: float = DEFAULT_C, indices=((),), quad: QuadConfig = QuadConfig()):
    """A-terms for several index multisets from one set of node evaluations."""
    nodes, weights = phi_nodes(l, C, quad)
    wphi, A = _weight_and_a(l, nodes)
    out = {}
    base = weights * wphi
    for idx in indices:
        f = base.copy()
        for i in idx:
            if not 1 <= int(i) <= 8:
                raise DomainError(f"index {i} outside 1..8")
            f = f * A[:, int(i) - 1]
        out[tuple(sorted(int(i) for i in idx))] = float(np.sum(f))
    return out


def a_terms(l: int, C: float = DEFAULT_C, index=(), quad: QuadConfig = QuadConfig()) -> float:
    """A_{index}: integral of prod a_i times sin(phi)/sqrt(gaps) over (C/l, pi - C/l)."""
    key = tuple(sorted(int(i) for i in index))
    if len(key) > 4:
        raise DomainError("index multisets have size 0..4")
    return a_term_table(l, C, (key,), quad)[key]


# ---------------------------------------------------------------- variance

def _mean_correction(l, A0, q0, mean, empirical_mean):
    """(lambda^2/8) A0 q0 - E[N^c]^2 under the chosen pairing."""
    L = covariance.lam(l)
    if mean == "asymptotic":
        return gaussmoments.zero_term_asymptotic(l, q0), 0.0
    if mean == "exact":
        E = gaussmoments.expected_count(l)
        return L * L / 8 * A0 * q0 - E * E, 0.0
    if mean == "empirical":
        if empirical_mean is None:
            raise DomainError("mean='empirical' needs empirical_mean=(mean, se)")
        E, se = (empirical_mean if isinstance(empirical_mean, (tuple, list)) else (empirical_mean, 0.0))
        return L * L / 8 * A0 * q0 - E * E, 2 * abs(E) * se
    raise DomainError(f"unknown mean mode {mean!r}")


def variance_integral(l: int, C: float = DEFAULT_C, cfg: Optional[McConfig] = None,
                      quad: QuadConfig = QuadConfig(), engine: str = "cf", mean: str = "asymptotic",
                      empirical_mean=None, threads: int = 1, budget: float = MC_BUDGET) -> Estimate:
    """Long-range Kac-Rice variance (lambda^2/8) int w q(a) dphi - E[N^c]^2.

    The A_0 q(0) part is split off and paired with E[N^c]^2 according to
    ``mean``: "asymptotic" (pairing with the large-l expansion of A_0), "exact" (closed-form mean) or
    "empirical" (caller-supplied ``(mean, se)``).
    """
    cfg = cfg or McConfig(samples=100_000)
    nodes, weights = phi_nodes(l, C, quad)
    wphi, A = _weight_and_a(l, nodes)
    L = covariance.lam(l)
    q0 = gaussmoments.I0 ** 2
    W = weights * wphi
    A0 = float(np.sum(W))
    if engine == "cf":
        qs = np.array([q_cf(a) for a in A])
        body, se = L * L / 8 * float(np.sum(W * (qs - q0))), 0.0
    elif engine == "mc":
        work = float(len(nodes)) * cfg.samples
        if work > budget:
            raise BudgetExceededError(f"{len(nodes)} nodes x {cfg.samples} samples exceeds budget {budget:.3g}")
        Fs = np.ascontiguousarray(np.stack([_factor_lower(covariance.require_psd(a)) for a in A]))
        kern = _pick(_integrated_nb, _integrated_np)
        Wc = np.ascontiguousarray(W)
        parts = _map_chunks(lambda X, antithetic=False: kern(X, Fs, Wc, antithetic), cfg, 6, threads)
        m, s = _finish(parts, _n_eff(cfg))
        body, se = L * L / 8 * (float(m) - A0 * q0), L * L / 8 * float(s)
    else:
        raise DomainError(f"unknown engine {engine!r}")
    corr, corr_se = _mean_correction(l, A0, q0, mean, empirical_mean)
    return Estimate(body + corr, math.hypot(se, corr_se), cfg.samples if engine == "mc" else 0)


def taylor_reconstruction(l: int, C: float = DEFAULT_C, cfg: Optional[McConfig] = None,
                          quad: QuadConfig = QuadConfig(), mean: str = "asymptotic", terms=None,
                          empirical_mean=None, threads: int = 1) -> float:
    """Variance from numerically integrated A-terms and q-derivatives at zero.

    By default only the five tracked index sets enter, with the closed-form
    derivatives; ``terms`` may restrict them further.  ``terms="full2"``
    adds every other first- and second-order index set, with derivatives
    estimated by the reweighted stencil under ``cfg``.  Tracked terms keep
    their closed-form derivatives: their A-terms are O(l^3), so any
    sampling noise there would swamp the result.
    """
    d = gaussmoments.q_derivatives_at_zero()._asdict()
    L = covariance.lam(l)
    if isinstance(terms, str):
        if terms != "full2":
            raise DomainError(f"unknown terms mode {terms!r}")
        cfg = cfg or McConfig(samples=4_000_000)
        extra = {k: v for k, v in q_gradient_hessian_mc(cfg, threads=threads).items()
                 if k not in TAYLOR_TERMS}
        table = a_term_table(l, C, ((),) + tuple(extra) + tuple(TAYLOR_TERMS), quad)
        total = 0.0
        for idx, est in extra.items():
            mult = 0.5 if len(idx) == 2 and idx[0] == idx[1] else 1.0
            total += L * L / 8 * table[idx] * mult * est.value
        for idx, name in TAYLOR_TERMS.items():
            total += L * L / 8 * table[idx] * gaussmoments.TAYLOR_WEIGHT[idx] * d[name]
    else:
        sel = TAYLOR_TERMS if terms is None else {tuple(sorted(k)): TAYLOR_TERMS[tuple(sorted(k))]
                                                  for k in terms}
        table = a_term_table(l, C, ((),) + tuple(sel), quad)
        total = 0.0
        for idx, name in sel.items():
            total += L * L / 8 * table[idx] * gaussmoments.TAYLOR_WEIGHT[idx] * d[name]
    corr, _ = _mean_correction(l, table[()], gaussmoments.I0 ** 2, mean, empirical_mean)
    return total + corr


# ---------------------------------------------------------------- A-term check

TRACKED_SETS = ((), (3,), (3, 3), (7, 7), (3, 7, 7), (7, 7, 7, 7))
OTHER_SETS = tuple([(i,) for i in range(1, 9) if i != 3]
                   + [(i, j) for i in range(1, 9) for j in range(i, 9) if (i, j) not in ((3, 3), (7, 7))]
                   + [(7, 7, 7)])
BAND_RATIO = 4.0


class TaylorRow(NamedTuple):
    index: tuple
    l: int
    numeric: float
    prediction: float
    scaled: float
    tracked: bool


def taylor_check(ls, C: float = DEFAULT_C, quad: QuadConfig = QuadConfig(), others: bool = True):
    """A-terms against their leading asymptotics over several degrees.

    Tracked sets report (lambda^2 A w - prediction) / l^2, with w the Taylor
    weight (for the empty set the comparison is lambda^2 (A_0 - prediction)).
    Other sets report lambda^2 A / l^2.  Returns (rows, verdicts) where a
    tracked verdict needs one sign and max/min <= BAND_RATIO, and an other
    verdict needs max |value| <= BAND_RATIO * max(|value at first l|, 1).
    """
    sets = TRACKED_SETS + (OTHER_SETS if others else ())
    rows = []
    for l in ls:
        L = covariance.lam(l)
        tab = a_term_table(l, C, sets, quad)
        pred = gaussmoments.term_predictions(l, C)
        for idx in sets:
            key = tuple(sorted(idx))
            A = tab[key]
            if idx in TRACKED_SETS:
                name = "A0" if not idx else gaussmoments.index_key(idx)
                w = gaussmoments.TAYLOR_WEIGHT[key]
                p = L * L * pred["A0"] if not idx else pred[name]
                num = L * L * A * w
                rows.append(TaylorRow(key, int(l), num, p, (num - p) / l ** 2, True))
            else:
                num = L * L * A
                rows.append(TaylorRow(key, int(l), num, 0.0, num / l ** 2, False))
    verdicts = {}
    for idx in sets:
        vals = np.array([r.scaled for r in rows if r.index == tuple(sorted(idx))])
        if idx in TRACKED_SETS:
            same = np.all(vals > 0) or np.all(vals < 0)
            ratio = float(np.max(np.abs(vals)) / np.min(np.abs(vals))) if same else math.inf
            verdicts[tuple(sorted(idx))] = (ratio <= BAND_RATIO, ratio)
        else:
            bound = BAND_RATIO * max(abs(vals[0]), 1.0)
            verdicts[tuple(sorted(idx))] = (bool(np.max(np.abs(vals)) <= bound), float(np.max(np.abs(vals))))
    return rows, verdicts
