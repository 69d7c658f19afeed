# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled shape-function kernels.

Same contract and parameter layout as ``_kernels_py``. Activations are
feature-major so every inner loop walks contiguous samples; reductions use
four independent accumulators (no fast-math, results are reproducible).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport expm1, sqrt

cnp.import_array()

BACKEND = "cython"


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef inline double _sum(const double* a, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i]
        s1 += a[i + 1]
        s2 += a[i + 2]
        s3 += a[i + 3]
        i += 4
    while i < n:
        s0 += a[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef void _dense(const double* h_prev, const double* params, Py_ssize_t w_off,
                 Py_ssize_t fan_in, Py_ssize_t fan_out, Py_ssize_t n,
                 double* out, bint elu) noexcept nogil:
    cdef Py_ssize_t b_off = w_off + fan_in * fan_out
    cdef Py_ssize_t j, k, s
    cdef double w, bias
    cdef double* o
    cdef const double* hp
    for j in range(fan_out):
        o = out + j * n
        bias = params[b_off + j]
        for s in range(n):
            o[s] = bias
        for k in range(fan_in):
            w = params[w_off + j * fan_in + k]
            hp = h_prev + k * n
            for s in range(n):
                o[s] = o[s] + w * hp[s]
        if elu:
            for s in range(n):
                if o[s] <= 0.0:
                    o[s] = expm1(o[s])


def mlp_forward(const double[::1] params, tuple widths, x):
    cdef Py_ssize_t n_layers = len(widths) - 1
    cdef Py_ssize_t i, off = 0, fan_in, fan_out
    cdef cnp.ndarray h = np.ascontiguousarray(x, dtype=np.float64).reshape(1, -1)
    cdef cnp.ndarray out
    cdef Py_ssize_t n = h.shape[1]
    acts = [h]
    for i in range(n_layers):
        fan_in = widths[i]
        fan_out = widths[i + 1]
        out = np.empty((fan_out, n), dtype=np.float64)
        _dense(<const double*> cnp.PyArray_DATA(h), &params[0], off, fan_in, fan_out, n,
               <double*> cnp.PyArray_DATA(out), i < n_layers - 1)
        off += fan_in * fan_out + fan_out
        acts.append(out)
        h = out
    return h[0].copy(), acts


def mlp_backward(const double[::1] params, tuple widths, list acts, grad_out):
    cdef Py_ssize_t n_layers = len(widths) - 1
    cdef Py_ssize_t i, j, k, s, fan_in, fan_out, w_off, b_off
    cdef double w
    cdef cnp.ndarray grad_arr = np.empty(params.shape[0], dtype=np.float64)
    cdef double* grad = <double*> cnp.PyArray_DATA(grad_arr)
    cdef cnp.ndarray g_arr = np.array(grad_out, dtype=np.float64).reshape(1, -1)
    cdef cnp.ndarray gp_arr
    cdef double* g
    cdef double* gp
    cdef double* gj
    cdef double* gpk
    cdef const double* hp
    cdef const double* act
    cdef Py_ssize_t n = g_arr.shape[1]
    offsets = []
    cdef Py_ssize_t off = 0
    for i in range(n_layers):
        offsets.append(off)
        off += widths[i] * widths[i + 1] + widths[i + 1]
    for i in range(n_layers - 1, -1, -1):
        fan_in = widths[i]
        fan_out = widths[i + 1]
        w_off = offsets[i]
        b_off = w_off + fan_in * fan_out
        hp = <const double*> cnp.PyArray_DATA(acts[i])
        g = <double*> cnp.PyArray_DATA(g_arr)
        gp_arr = np.zeros((fan_in, n), dtype=np.float64)
        gp = <double*> cnp.PyArray_DATA(gp_arr)
        act = NULL
        if i < n_layers - 1:
            act = <const double*> cnp.PyArray_DATA(acts[i + 1])
        with nogil:
            if act != NULL:
                for j in range(fan_out * n):
                    if act[j] <= 0.0:
                        g[j] = g[j] * (act[j] + 1.0)
            for j in range(fan_out):
                gj = g + j * n
                grad[b_off + j] = _sum(gj, n)
                for k in range(fan_in):
                    grad[w_off + j * fan_in + k] = _dot(gj, hp + k * n, n)
                    w = params[w_off + j * fan_in + k]
                    gpk = gp + k * n
                    for s in range(n):
                        gpk[s] = gpk[s] + w * gj[s]
        g_arr = gp_arr
    return g_arr[0].copy(), grad_arr


def adam_step(double[::1] params, const double[::1] grad, double[::1] m, double[::1] v,
              long step, double lr, double beta1, double beta2, double eps,
              double weight_decay):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double gi
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    with nogil:
        for i in range(n):
            gi = grad[i] + weight_decay * params[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            params[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
