"""Pure numpy implementations of the numerical kernels.

These are the reference versions; ``_kernels.pyx`` mirrors them loop by loop.
Every function takes C-contiguous float64 arrays and returns fresh arrays.
"""
import numpy as np

ALPHA_CONSTANT = 0
ALPHA_GAUSSIAN = 1

# pair blocks for the O(n^2) sum; keeps the temporary at <= 512*512 doubles
_BLOCK = 512


def _smoothstep(u):
    """Quintic smoothstep on [0, 1] and its first two derivatives in u."""
    u2 = u * u
    val = u2 * u * (10.0 - 15.0 * u + 6.0 * u2)
    d1 = 30.0 * u2 * (1.0 - 2.0 * u + u2)
    d2 = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u2)
    return val, d1, d2


def weight_profile(s, p):
    """Radial profile beta(s) of the weight, s = |x|^2, with beta' and beta''."""
    s = np.asarray(s, dtype=float)
    beta = np.ones_like(s)
    db = np.zeros_like(s)
    d2b = np.zeros_like(s)
    h = 0.5 * p

    outer = s >= 4.0
    if np.any(outer):
        so = s[outer]
        g = so ** h
        beta[outer] = g
        db[outer] = h * g / so
        d2b[outer] = h * (h - 1.0) * g / (so * so)

    mid = (s > 1.0) & ~outer
    if np.any(mid):
        sm = s[mid]
        u = (sm - 1.0) / 3.0
        chi, dchi, d2chi = _smoothstep(u)
        dchi = dchi / 3.0
        d2chi = d2chi / 9.0
        g = sm ** h
        dg = h * g / sm
        d2g = h * (h - 1.0) * g / (sm * sm)
        beta[mid] = 1.0 + chi * (g - 1.0)
        db[mid] = dchi * (g - 1.0) + chi * dg
        d2b[mid] = d2chi * (g - 1.0) + 2.0 * dchi * dg + chi * d2g
    return beta, db, d2b


def weight_eval(X, p, order=0):
    X = np.ascontiguousarray(X, dtype=float)
    s = np.einsum("ij,ij->i", X, X)
    beta, db, d2b = weight_profile(s, p)
    grad = hess = None
    if order >= 1:
        grad = 2.0 * db[:, None] * X
    if order >= 2:
        d = X.shape[1]
        hess = 4.0 * d2b[:, None, None] * X[:, :, None] * X[:, None, :]
        hess += 2.0 * db[:, None, None] * np.eye(d)[None, :, :]
    return beta, grad, hess


def bump_eval(X, center, radius, scale, order=0):
    X = np.ascontiguousarray(X, dtype=float)
    n, d = X.shape
    diff = X - np.asarray(center, dtype=float)[None, :]
    r2 = radius * radius
    u = np.einsum("ij,ij->i", diff, diff) / r2
    inside = u < 1.0

    val = np.zeros(n)
    g = np.zeros(n)
    dg = np.zeros(n)
    d2g = np.zeros(n)
    if np.any(inside):
        t = 1.0 / (1.0 - u[inside])
        gi = np.exp(-t)
        g[inside] = gi
        dg[inside] = -gi * t * t
        d2g[inside] = gi * (t ** 4 - 2.0 * t ** 3)
    val = scale * g

    grad = hess = None
    if order >= 1:
        grad = (scale * dg * 2.0 / r2)[:, None] * diff
    if order >= 2:
        hess = (scale * d2g * 4.0 / (r2 * r2))[:, None, None] * diff[:, :, None] * diff[:, None, :]
        hess += (scale * dg * 2.0 / r2)[:, None, None] * np.eye(d)[None, :, :]
    return val, grad, hess


def _alpha_block(Xi, Xj, kind, c, ell):
    if kind == ALPHA_CONSTANT:
        return np.full((Xi.shape[0], Xj.shape[0]), c)
    if kind == ALPHA_GAUSSIAN:
        sq = (
            np.einsum("ij,ij->i", Xi, Xi)[:, None]
            + np.einsum("ij,ij->i", Xj, Xj)[None, :]
            - 2.0 * Xi @ Xj.T
        )
        np.maximum(sq, 0.0, out=sq)
        return c * np.exp(-sq / (2.0 * ell * ell))
    raise ValueError(f"unknown alpha kind {kind}")


def sqdiff_pair_sum(a, X, P, PM, kind, c, ell):
    """sum_ij a_i a_j alpha(x_i, x_j) (P_i - P_j)^T M (P_i - P_j), with PM = P @ M.

    Blocks are visited in a fixed order so the result does not depend on how
    the caller chunks its data.
    """
    a = np.ascontiguousarray(a, dtype=float)
    X = np.ascontiguousarray(X, dtype=float)
    P = np.ascontiguousarray(P, dtype=float)
    PM = np.ascontiguousarray(PM, dtype=float)
    n = a.shape[0]
    q = np.einsum("ik,ik->i", PM, P)
    total = 0.0
    for i0 in range(0, n, _BLOCK):
        i1 = min(n, i0 + _BLOCK)
        for j0 in range(0, n, _BLOCK):
            j1 = min(n, j0 + _BLOCK)
            alpha = _alpha_block(X[i0:i1], X[j0:j1], kind, c, ell)
            cross = PM[i0:i1] @ P[j0:j1].T
            inner = q[i0:i1, None] + q[None, j0:j1] - 2.0 * cross
            total += float(a[i0:i1] @ (alpha * inner) @ a[j0:j1])
    return total
