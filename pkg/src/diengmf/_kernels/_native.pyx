# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: map iteration, fixed-step RK4, spline evaluation.

Mirrors ``_fallback.py`` operation for operation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, log, sin, sqrt

cnp.import_array()


def ikeda_map(double[:, ::1] points, double u, int iterations):
    cdef Py_ssize_t m = points.shape[0]
    out = np.empty((m, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i
    cdef int k
    cdef double x, y, t, ct, st, xn
    for i in range(m):
        x = points[i, 0]
        y = points[i, 1]
        for k in range(iterations):
            t = 0.4 - 6.0 / (1.0 + x * x + y * y)
            ct = cos(t)
            st = sin(t)
            xn = 1.0 + u * (x * ct - y * st)
            y = u * (x * st + y * ct)
            x = xn
        o[i, 0] = x
        o[i, 1] = y
    return out


def ikeda_inverse_map(double[:, ::1] points, double u, int iterations):
    cdef Py_ssize_t m = points.shape[0]
    out = np.empty((m, 2), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i
    cdef int k
    cdef double x, y, xh, yh, t, ct, st
    for i in range(m):
        x = points[i, 0]
        y = points[i, 1]
        for k in range(iterations):
            xh = (x - 1.0) / u
            yh = y / u
            t = 0.4 - 6.0 / (1.0 + xh * xh + yh * yh)
            ct = cos(t)
            st = sin(t)
            x = xh * ct + yh * st
            y = -xh * st + yh * ct
        o[i, 0] = x
        o[i, 1] = y
    return out


cdef inline void _lorenz_field(double x, double y, double z,
                               double sigma, double rho, double beta,
                               double* out) nogil:
    out[0] = sigma * (y - x)
    out[1] = x * (rho - z) - y
    out[2] = x * y - beta * z


def lorenz_rk4(double[:, ::1] points, double sigma, double rho, double beta,
               double step, int n_steps):
    cdef Py_ssize_t m = points.shape[0]
    out = np.array(points, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i
    cdef int k
    cdef double x, y, z
    cdef double k1[3]
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    for i in range(m):
        x = o[i, 0]
        y = o[i, 1]
        z = o[i, 2]
        for k in range(n_steps):
            _lorenz_field(x, y, z, sigma, rho, beta, k1)
            _lorenz_field(x + 0.5 * step * k1[0], y + 0.5 * step * k1[1],
                          z + 0.5 * step * k1[2], sigma, rho, beta, k2)
            _lorenz_field(x + 0.5 * step * k2[0], y + 0.5 * step * k2[1],
                          z + 0.5 * step * k2[2], sigma, rho, beta, k3)
            _lorenz_field(x + step * k3[0], y + step * k3[1],
                          z + step * k3[2], sigma, rho, beta, k4)
            x = x + (step / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            y = y + (step / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            z = z + (step / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        o[i, 0] = x
        o[i, 1] = y
        o[i, 2] = z
    return out


cdef inline Py_ssize_t _find_bin(double v, double[:, ::1] knots, Py_ssize_t row,
                                 Py_ssize_t n_bins) nogil:
    cdef Py_ssize_t k = 0
    while k < n_bins - 1 and knots[row, k + 1] <= v:
        k += 1
    return k


def rqs_forward(double[::1] x, double[:, ::1] xk, double[:, ::1] yk,
                double[:, ::1] d):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n_bins = xk.shape[1] - 1
    y_out = np.empty(m, dtype=np.float64)
    ld_out = np.empty(m, dtype=np.float64)
    cdef double[::1] yo = y_out
    cdef double[::1] lo = ld_out
    cdef Py_ssize_t i, k
    cdef double v, width, height, slope, stiff, xi, q, denom, numer, deriv_num
    for i in range(m):
        v = x[i]
        if v <= xk[i, 0] or v >= xk[i, n_bins]:
            yo[i] = v
            lo[i] = 0.0
            continue
        k = _find_bin(v, xk, i, n_bins)
        width = xk[i, k + 1] - xk[i, k]
        height = yk[i, k + 1] - yk[i, k]
        slope = height / width
        stiff = d[i, k + 1] + d[i, k] - 2.0 * slope
        xi = (v - xk[i, k]) / width
        q = xi * (1.0 - xi)
        denom = slope + stiff * q
        numer = height * (slope * xi * xi + d[i, k] * q)
        yo[i] = yk[i, k] + numer / denom
        deriv_num = (d[i, k + 1] * xi * xi + 2.0 * slope * q
                     + d[i, k] * (1.0 - xi) * (1.0 - xi))
        lo[i] = 2.0 * log(slope) + log(deriv_num) - 2.0 * log(denom)
    return y_out, ld_out


def rqs_inverse(double[::1] x, double[:, ::1] xk, double[:, ::1] yk,
                double[:, ::1] d):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n_bins = xk.shape[1] - 1
    x_out = np.empty(m, dtype=np.float64)
    ld_out = np.empty(m, dtype=np.float64)
    cdef double[::1] xo = x_out
    cdef double[::1] lo = ld_out
    cdef Py_ssize_t i, k
    cdef double v, width, height, slope, stiff, delta, qa, qb, qc, disc
    cdef double xi, q, denom, deriv_num
    for i in range(m):
        v = x[i]
        if v <= yk[i, 0] or v >= yk[i, n_bins]:
            xo[i] = v
            lo[i] = 0.0
            continue
        k = _find_bin(v, yk, i, n_bins)
        width = xk[i, k + 1] - xk[i, k]
        height = yk[i, k + 1] - yk[i, k]
        slope = height / width
        stiff = d[i, k + 1] + d[i, k] - 2.0 * slope
        delta = v - yk[i, k]
        qa = height * (slope - d[i, k]) + delta * stiff
        qb = height * d[i, k] - delta * stiff
        qc = -slope * delta
        disc = qb * qb - 4.0 * qa * qc
        xi = 2.0 * qc / (-qb - sqrt(disc))
        xo[i] = xk[i, k] + xi * width
        q = xi * (1.0 - xi)
        denom = slope + stiff * q
        deriv_num = (d[i, k + 1] * xi * xi + 2.0 * slope * q
                     + d[i, k] * (1.0 - xi) * (1.0 - xi))
        lo[i] = -(2.0 * log(slope) + log(deriv_num) - 2.0 * log(denom))
    return x_out, ld_out
