# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors `_pykernels` exactly; the row loops here avoid the temporary
arrays the numpy backend allocates, which matters at the small matrix
sizes this package runs at.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, log, sqrt

cnp.import_array()

cdef double _INV_SQRT2 = 0.7071067811865476
cdef double _INV_SQRT2PI = 0.3989422804014327


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double mx, s
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(d):
            out[i, j] = exp(x[i, j] - mx)
            s += out[i, j]
        for j in range(d):
            out[i, j] /= s
    return out_arr


def softmax_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += dy[i, j] * y[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (dy[i, j] - dot)
    return out_arr


def layer_norm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    y_arr = np.empty((n, d), dtype=np.float64)
    xhat_arr = np.empty((n, d), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr, xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mean, var, c, istd
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        istd = 1.0 / sqrt(var + eps)
        inv[i] = istd
        for j in range(d):
            xhat[i, j] = (x[i, j] - mean) * istd
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return y_arr, xhat_arr, inv_arr


def layer_norm_bwd(double[:, ::1] dy, double[:, ::1] xhat, double[::1] inv_std, double[::1] gain):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], i, j
    dx_arr = np.empty((n, d), dtype=np.float64)
    dgain_arr = np.zeros(d, dtype=np.float64)
    dbias_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr, dbias = dbias_arr
    cdef double m1, m2, dxh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * inv_std[i]
            dgain[j] += dy[i, j] * xhat[i, j]
            dbias[j] += dy[i, j]
    return dx_arr, dgain_arr, dbias_arr


def gelu_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = 0.5 * x[i] * (1.0 + erf(x[i] * _INV_SQRT2))
    return out_arr


def gelu_bwd(double[::1] x, double[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * _INV_SQRT2))
        pdf = _INV_SQRT2PI * exp(-0.5 * x[i] * x[i])
        out[i] = dy[i] * (cdf + x[i] * pdf)
    return out_arr


def cross_entropy_fwd(double[:, ::1] logits, long[::1] labels, cnp.uint8_t[::1] mask):
    cdef Py_ssize_t t = logits.shape[0], v = logits.shape[1], i, j
    probs_arr = np.empty((t, v), dtype=np.float64)
    cdef double[:, ::1] probs = probs_arr
    cdef double mx, s, loss = 0.0
    cdef Py_ssize_t n_masked = 0
    for i in range(t):
        mx = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(v):
            probs[i, j] = exp(logits[i, j] - mx)
            s += probs[i, j]
        for j in range(v):
            probs[i, j] /= s
        if mask[i]:
            n_masked += 1
            loss -= log(probs[i, labels[i]])
    return loss / n_masked, probs_arr


def cross_entropy_bwd(double[:, ::1] probs, long[::1] labels, cnp.uint8_t[::1] mask, double dloss):
    cdef Py_ssize_t t = probs.shape[0], v = probs.shape[1], i, j
    cdef Py_ssize_t n_masked = 0
    for i in range(t):
        if mask[i]:
            n_masked += 1
    out_arr = np.zeros((t, v), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double scale = dloss / n_masked
    for i in range(t):
        if mask[i]:
            for j in range(v):
                out[i, j] = probs[i, j] * scale
            out[i, labels[i]] -= scale
    return out_arr


def adamw_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p[i])


def lcs_length(int[::1] a, int[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    if n == 0 or m == 0:
        return 0
    prev_arr = np.zeros(m + 1, dtype=np.int64)
    cur_arr = np.zeros(m + 1, dtype=np.int64)
    cdef long[::1] prev = prev_arr, cur = cur_arr
    cdef long best
    for i in range(n):
        for j in range(1, m + 1):
            if a[i] == b[j - 1]:
                best = prev[j - 1] + 1
            else:
                best = prev[j]
            if cur[j - 1] > best:
                best = cur[j - 1]
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])
