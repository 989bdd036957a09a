# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels.

Every loop accumulates in the same order as the numpy fallback in
``_pykernels`` (arc order within a row, rows ascending) so both backends
produce the same bits on the same inputs.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def spmm(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
         const double[::1] vals, const double[:, ::1] h):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t k = h.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, c, j
    cdef double w
    for i in range(n):
        for e in range(offsets[i], offsets[i + 1]):
            c = cols[e]
            w = vals[e]
            for j in range(k):
                out[i, j] += w * h[c, j]
    return out_arr


def spmm_t(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
           const double[::1] vals, const double[:, ::1] g, Py_ssize_t n_out):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t k = g.shape[1]
    out_arr = np.zeros((n_out, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, c, j
    cdef double w
    for i in range(n):
        for e in range(offsets[i], offsets[i + 1]):
            c = cols[e]
            w = vals[e]
            for j in range(k):
                out[c, j] += w * g[i, j]
    return out_arr


def edge_dot(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] cols,
             const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t k = a.shape[1]
    out_arr = np.zeros(cols.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e, c, j
    cdef double s
    for i in range(n):
        for e in range(offsets[i], offsets[i + 1]):
            c = cols[e]
            s = 0.0
            for j in range(k):
                s += a[i, j] * b[c, j]
            out[e] = s
    return out_arr


def segment_softmax(const cnp.int64_t[::1] offsets, const double[:, ::1] x):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t m = x.shape[1]
    out_arr = np.empty((x.shape[0], m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, lo, hi
    cdef double mx, s
    for i in range(n):
        lo = offsets[i]
        hi = offsets[i + 1]
        if lo == hi:
            continue
        for j in range(m):
            mx = x[lo, j]
            for e in range(lo + 1, hi):
                if x[e, j] > mx:
                    mx = x[e, j]
            s = 0.0
            for e in range(lo, hi):
                out[e, j] = exp(x[e, j] - mx)
                s += out[e, j]
            for e in range(lo, hi):
                out[e, j] = out[e, j] / s
    return out_arr


def segment_softmax_backward(const cnp.int64_t[::1] offsets,
                             const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t m = y.shape[1]
    out_arr = np.empty((y.shape[0], m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, j, lo, hi
    cdef double s
    for i in range(n):
        lo = offsets[i]
        hi = offsets[i + 1]
        for j in range(m):
            s = 0.0
            for e in range(lo, hi):
                s += y[e, j] * gy[e, j]
            for e in range(lo, hi):
                out[e, j] = y[e, j] * (gy[e, j] - s)
    return out_arr


def partial_shuffle(cnp.int64_t[::1] perm, const cnp.int64_t[::1] draws):
    """Swap perm[i] with perm[draws[i]] for i ascending, in place."""
    cdef Py_ssize_t i, j
    cdef cnp.int64_t tmp
    for i in range(draws.shape[0]):
        j = draws[i]
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
