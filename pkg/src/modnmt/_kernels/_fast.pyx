# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fused kernels. Reference semantics live in pure.py."""

from libc.math cimport exp, expf, log, logf, sqrt, sqrtf
from libc.stdint cimport int64_t

import numpy as np

NAME = "fast"

ctypedef fused real:
    float
    double


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


cdef inline real _sqrt(real x) noexcept nogil:
    if real is float:
        return sqrtf(x)
    else:
        return sqrt(x)


def softmax2d(const real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    if real is float:
        out_arr = np.empty((n, d), dtype=np.float32)
    else:
        out_arr = np.empty((n, d), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef real m, r
    cdef double s
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            out[i, j] = _exp(x[i, j] - m)
            s += out[i, j]
        r = <real> (1.0 / s)
        for j in range(d):
            out[i, j] = out[i, j] * r
    return out_arr


def softmax2d_grad(const real[:, ::1] y, const real[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    if real is float:
        out_arr = np.empty((n, d), dtype=np.float32)
    else:
        out_arr = np.empty((n, d), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += y[i, j] * g[i, j]
        for j in range(d):
            out[i, j] = <real> (y[i, j] * (g[i, j] - dot))
    return out_arr


def layernorm2d(const real[:, ::1] x, const real[::1] gain, const real[::1] bias,
                double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    out_arr = np.empty((n, d), dtype=dt)
    xhat_arr = np.empty((n, d), dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef real[:, ::1] out = out_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mu, var, r, xc
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real> r
        for j in range(d):
            xhat[i, j] = <real> ((x[i, j] - mu) * r)
            out[i, j] = <real> (xhat[i, j] * gain[j] + bias[j])
    return out_arr, xhat_arr, rstd_arr


def layernorm2d_grad(const real[:, ::1] g, const real[:, ::1] xhat,
                     const real[::1] rstd, const real[::1] gain):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], i, j
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    dx_arr = np.empty((n, d), dtype=dt)
    dgain_arr = np.zeros(d, dtype=dt)
    dbias_arr = np.zeros(d, dtype=dt)
    cdef real[:, ::1] dx = dx_arr
    cdef real[::1] dgain = dgain_arr
    cdef real[::1] dbias = dbias_arr
    cdef double m1, m2, dxh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dgain[j] += g[i, j] * xhat[i, j]
            dbias[j] += g[i, j]
            dxh = g[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dx[i, j] = <real> (rstd[i] * (g[i, j] * gain[j] - m1 - xhat[i, j] * m2))
    return dx_arr, dgain_arr, dbias_arr


def cross_entropy2d(const real[:, ::1] logits, const int64_t[::1] targets, valid):
    cdef Py_ssize_t n = logits.shape[0], d = logits.shape[1], i, j
    cdef const unsigned char[::1] vm = valid.view(np.uint8)
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    probs_arr = np.empty((n, d), dtype=dt)
    cdef real[:, ::1] probs = probs_arr
    cdef real m, r
    cdef double z, total = 0.0
    cdef int64_t t
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, d):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(d):
            probs[i, j] = _exp(logits[i, j] - m)
            z += probs[i, j]
        r = <real> (1.0 / z)
        for j in range(d):
            probs[i, j] = probs[i, j] * r
        if vm[i]:
            t = targets[i]
            total -= (logits[i, t] - m) - log(z)
    return total, probs_arr


def cross_entropy2d_grad(const real[:, ::1] probs, const int64_t[::1] targets,
                         valid, double scale):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1], i, j
    cdef const unsigned char[::1] vm = valid.view(np.uint8)
    if real is float:
        dt = np.float32
    else:
        dt = np.float64
    out_arr = np.empty((n, d), dtype=dt)
    cdef real[:, ::1] out = out_arr
    for i in range(n):
        if vm[i]:
            for j in range(d):
                out[i, j] = <real> (probs[i, j] * scale)
            out[i, targets[i]] -= <real> scale
        else:
            for j in range(d):
                out[i, j] = 0.0
    return out_arr


def adam_update(real[::1] p, const real[::1] g, real[::1] m, real[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0], i
    cdef real b1 = <real> beta1, b2 = <real> beta2
    cdef real c1 = <real> (1.0 - beta1), c2 = <real> (1.0 - beta2)
    cdef real rlr = <real> lr, rbc1 = <real> bc1, rbc2 = <real> bc2
    cdef real reps = <real> eps
    cdef real mi, vi
    for i in range(n):
        mi = b1 * m[i] + c1 * g[i]
        vi = b2 * v[i] + c2 * g[i] * g[i]
        m[i] = mi
        v[i] = vi
        p[i] -= rlr * (mi / rbc1) / (_sqrt(vi / rbc2) + reps)
