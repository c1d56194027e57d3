"""Independent reference constructions shared by several test modules."""

import math

import numpy as np

from spherecrits import field as F


def basis_jets(l, lon, theta=math.pi / 2):
    """(2l+1, 5) array of (g1, g2, h11, h12, h22) for each real basis function."""
    p = F.SpherePoint(theta, lon)
    rows = []
    for k in range(2 * l + 1):
        e = np.zeros(2 * l + 1)
        e[k] = 1.0
        j = F.eval_jet(F.HarmonicField(l, e), p)
        rows.append([j.grad[0], j.grad[1], j.hess[0, 0], j.hess[0, 1], j.hess[1, 1]])
    return np.array(rows)


def jet_covariance(l, lon0, phi):
    """Joint covariance of (grad f(x), grad f(y), Hess f(x), Hess f(y)).

    x and y sit on the equator at longitudes lon0 and lon0 + phi.  With iid
    unit coefficients the covariance is the sum over basis functions, so this
    goes through the field's own polynomial evaluation and never touches the
    Legendre derivative recurrences.  Order: g1x g2x g1y g2y, h(x), h(y).
    """
    X = basis_jets(l, lon0)
    Y = basis_jets(l, lon0 + phi)
    V = np.hstack([X[:, :2], Y[:, :2], X[:, 2:], Y[:, 2:]])
    return V.T @ V


def conditioned_blocks(l, lon0, phi):
    S = jet_covariance(l, lon0, phi)
    g, h = slice(0, 4), slice(4, 10)
    cond = S[h, h] - S[h, g] @ np.linalg.solve(S[g, g], S[g, h])
    cond *= 8 / (l * (l + 1.0)) ** 2
    return cond[:3, :3], cond[:3, 3:]
