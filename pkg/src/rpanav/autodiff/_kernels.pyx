# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the fused kernels; same signatures as ``_fallback``."""

import numpy as np
from libc.math cimport exp, tanh, INFINITY


cdef inline double _sig(double x) nogil:
    return 0.5 * (tanh(0.5 * x) + 1.0)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t k, n = src.shape[0]
    with nogil:
        for k in range(n):
            dst[k] = _sig(src[k])
    return out.reshape(np.shape(x))


def masked_softmax(x, mask=None):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    shape = arr.shape
    cdef Py_ssize_t n = shape[len(shape) - 1] if arr.ndim else 1
    if mask is None:
        keep = np.ones(arr.shape, dtype=np.uint8)
    else:
        keep = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef double[:, ::1] a = arr.reshape(-1, n)
    cdef unsigned char[:, ::1] m = keep.reshape(-1, n)
    out = np.empty((a.shape[0], n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, k
    cdef double mx, s
    with nogil:
        for r in range(a.shape[0]):
            mx = -INFINITY
            for k in range(n):
                if m[r, k] and a[r, k] > mx:
                    mx = a[r, k]
            s = 0.0
            for k in range(n):
                if m[r, k]:
                    o[r, k] = exp(a[r, k] - mx)
                    s += o[r, k]
                else:
                    o[r, k] = 0.0
            for k in range(n):
                o[r, k] /= s
    return out.reshape(shape)


def softmax_backward(out, g):
    y_arr = np.ascontiguousarray(out, dtype=np.float64)
    shape = y_arr.shape
    cdef Py_ssize_t n = shape[len(shape) - 1]
    cdef double[:, ::1] y = y_arr.reshape(-1, n)
    cdef double[:, ::1] gg = np.ascontiguousarray(g, dtype=np.float64).reshape(-1, n)
    res = np.empty((y.shape[0], n), dtype=np.float64)
    cdef double[:, ::1] d = res
    cdef Py_ssize_t r, k
    cdef double dot
    with nogil:
        for r in range(y.shape[0]):
            dot = 0.0
            for k in range(n):
                dot += gg[r, k] * y[r, k]
            for k in range(n):
                d[r, k] = y[r, k] * (gg[r, k] - dot)
    return res.reshape(shape)


def lstm_forward(gates, c_prev):
    cdef double[:, ::1] gt = np.ascontiguousarray(gates, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t B = cp.shape[0], H = cp.shape[1], b, k
    hc_arr = np.empty((B, 2 * H), dtype=np.float64)
    cache_arr = np.empty((B, 5 * H), dtype=np.float64)
    cdef double[:, ::1] hc = hc_arr
    cdef double[:, ::1] cache = cache_arr
    cdef double i, f, g, o, c, tc
    with nogil:
        for b in range(B):
            for k in range(H):
                i = _sig(gt[b, k])
                f = _sig(gt[b, H + k])
                g = tanh(gt[b, 2 * H + k])
                o = _sig(gt[b, 3 * H + k])
                c = f * cp[b, k] + i * g
                tc = tanh(c)
                hc[b, k] = o * tc
                hc[b, H + k] = c
                cache[b, k] = i
                cache[b, H + k] = f
                cache[b, 2 * H + k] = g
                cache[b, 3 * H + k] = o
                cache[b, 4 * H + k] = tc
    return hc_arr, cache_arr


def lstm_backward(dhc, c_prev, cache):
    cdef double[:, ::1] d = np.ascontiguousarray(dhc, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef double[:, ::1] ca = np.ascontiguousarray(cache, dtype=np.float64)
    cdef Py_ssize_t B = cp.shape[0], H = cp.shape[1], b, k
    dg_arr = np.empty((B, 4 * H), dtype=np.float64)
    dcp_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dg = dg_arr
    cdef double[:, ::1] dcp = dcp_arr
    cdef double i, f, g, o, tc, dh, dc
    with nogil:
        for b in range(B):
            for k in range(H):
                i = ca[b, k]
                f = ca[b, H + k]
                g = ca[b, 2 * H + k]
                o = ca[b, 3 * H + k]
                tc = ca[b, 4 * H + k]
                dh = d[b, k]
                dc = d[b, H + k] + dh * o * (1.0 - tc * tc)
                dg[b, k] = dc * g * i * (1.0 - i)
                dg[b, H + k] = dc * cp[b, k] * f * (1.0 - f)
                dg[b, 2 * H + k] = dc * i * (1.0 - g * g)
                dg[b, 3 * H + k] = dh * tc * o * (1.0 - o)
                dcp[b, k] = dc * f
    return dg_arr, dcp_arr
