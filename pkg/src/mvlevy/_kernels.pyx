# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same signatures and results as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, pow

cnp.import_array()

DEF ALPHA_CONSTANT = 0
DEF ALPHA_GAUSSIAN = 1


cdef inline void _profile(double s, double h, double* beta, double* db, double* d2b) nogil:
    cdef double u, u2, chi, dchi, d2chi, g, dg, d2g
    if s >= 4.0:
        g = pow(s, h)
        beta[0] = g
        db[0] = h * g / s
        d2b[0] = h * (h - 1.0) * g / (s * s)
    elif s > 1.0:
        u = (s - 1.0) / 3.0
        u2 = u * u
        chi = u2 * u * (10.0 - 15.0 * u + 6.0 * u2)
        dchi = 30.0 * u2 * (1.0 - 2.0 * u + u2) / 3.0
        d2chi = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u2) / 9.0
        g = pow(s, h)
        dg = h * g / s
        d2g = h * (h - 1.0) * g / (s * s)
        beta[0] = 1.0 + chi * (g - 1.0)
        db[0] = dchi * (g - 1.0) + chi * dg
        d2b[0] = d2chi * (g - 1.0) + 2.0 * dchi * dg + chi * d2g
    else:
        beta[0] = 1.0
        db[0] = 0.0
        d2b[0] = 0.0


def weight_eval(X, double p, int order=0):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j, k
    cdef double h = 0.5 * p, s, beta, db, d2b
    val_arr = np.empty(n)
    cdef double[::1] val = val_arr
    grad_arr = np.empty((n, d)) if order >= 1 else None
    hess_arr = np.empty((n, d, d)) if order >= 2 else None
    cdef double[:, ::1] grad
    cdef double[:, :, ::1] hess
    if order >= 1:
        grad = grad_arr
    if order >= 2:
        hess = hess_arr
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j] * x[i, j]
        _profile(s, h, &beta, &db, &d2b)
        val[i] = beta
        if order >= 1:
            for j in range(d):
                grad[i, j] = 2.0 * db * x[i, j]
        if order >= 2:
            for j in range(d):
                for k in range(d):
                    hess[i, j, k] = 4.0 * d2b * x[i, j] * x[i, k]
                hess[i, j, j] += 2.0 * db
    return val_arr, grad_arr, hess_arr


def bump_eval(X, center, double radius, double scale, int order=0):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(center, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j, k
    cdef double r2 = radius * radius, u, t, g, dg, d2g, a1, a2
    val_arr = np.zeros(n)
    cdef double[::1] val = val_arr
    grad_arr = np.zeros((n, d)) if order >= 1 else None
    hess_arr = np.zeros((n, d, d)) if order >= 2 else None
    cdef double[:, ::1] grad
    cdef double[:, :, ::1] hess
    if order >= 1:
        grad = grad_arr
    if order >= 2:
        hess = hess_arr
    for i in range(n):
        u = 0.0
        for j in range(d):
            u += (x[i, j] - c[j]) * (x[i, j] - c[j])
        u /= r2
        if u >= 1.0:
            continue
        t = 1.0 / (1.0 - u)
        g = exp(-t)
        dg = -g * t * t
        d2g = g * (t * t * t * t - 2.0 * t * t * t)
        val[i] = scale * g
        if order >= 1:
            a1 = scale * dg * 2.0 / r2
            for j in range(d):
                grad[i, j] = a1 * (x[i, j] - c[j])
        if order >= 2:
            a2 = scale * d2g * 4.0 / (r2 * r2)
            for j in range(d):
                for k in range(d):
                    hess[i, j, k] = a2 * (x[i, j] - c[j]) * (x[i, k] - c[k])
                hess[i, j, j] += a1
    return val_arr, grad_arr, hess_arr


def sqdiff_pair_sum(a, X, P, PM, int kind, double c, double ell):
    cdef const double[::1] w = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] pm = np.ascontiguousarray(PM, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], d = x.shape[1], K = p.shape[1], i, j, k
    if kind != ALPHA_CONSTANT and kind != ALPHA_GAUSSIAN:
        raise ValueError(f"unknown alpha kind {kind}")
    q_arr = np.empty(n)
    cdef double[::1] q = q_arr
    cdef double total = 0.0, row, alpha, cross, sq, diff, inv = 1.0 / (2.0 * ell * ell)
    with nogil:
        for i in range(n):
            q[i] = 0.0
            for k in range(K):
                q[i] += pm[i, k] * p[i, k]
        for i in range(n):
            row = 0.0
            for j in range(n):
                cross = 0.0
                for k in range(K):
                    cross += pm[i, k] * p[j, k]
                if kind == ALPHA_GAUSSIAN:
                    sq = 0.0
                    for k in range(d):
                        diff = x[i, k] - x[j, k]
                        sq += diff * diff
                    alpha = c * exp(-sq * inv)
                else:
                    alpha = c
                row += w[j] * alpha * (q[i] + q[j] - 2.0 * cross)
            total += w[i] * row
    return total
