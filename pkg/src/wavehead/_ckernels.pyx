# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirror of ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

from .errors import SingularMatrixError

cnp.import_array()

PIVOT_RTOL = 1e-14


def lu_factor(M):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] arr = np.array(
        M, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] a = arr
    cdef Py_ssize_t n = a.shape[0]
    cdef cnp.ndarray[cnp.intp_t, ndim=1] perm_arr = np.arange(n, dtype=np.intp)
    cdef cnp.intp_t[::1] perm = perm_arr
    cdef Py_ssize_t i, j, k, p
    cdef double scale = 0.0, tol, best, v, pivot, f
    cdef cnp.intp_t ti
    for i in range(n):
        for j in range(n):
            v = fabs(a[i, j])
            if v > scale:
                scale = v
    tol = PIVOT_RTOL * scale
    for k in range(n):
        p = k
        best = fabs(a[k, k])
        for i in range(k + 1, n):
            v = fabs(a[i, k])
            if v > best:
                best = v
                p = i
        pivot = a[p, k]
        if not fabs(pivot) > tol:
            raise SingularMatrixError(
                f"matrix is singular to working precision (column {k}, "
                f"|pivot|={fabs(pivot):.3e}, threshold={tol:.3e})"
            )
        if p != k:
            for j in range(n):
                v = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = v
            ti = perm[k]
            perm[k] = perm[p]
            perm[p] = ti
        for i in range(k + 1, n):
            f = a[i, k] / pivot
            a[i, k] = f
            if f != 0.0:
                for j in range(k + 1, n):
                    a[i, j] -= f * a[k, j]
    return arr, perm_arr


def lu_solve(lu, perm, B):
    cdef double[:, ::1] a = np.ascontiguousarray(lu, dtype=np.float64)
    cdef cnp.intp_t[::1] pv = np.ascontiguousarray(perm, dtype=np.intp)
    B = np.asarray(B, dtype=np.float64)
    squeeze = B.ndim == 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.ascontiguousarray(
        (B.reshape(-1, 1) if squeeze else B)[np.asarray(pv)], dtype=np.float64).copy()
    cdef double[:, ::1] x = out
    cdef Py_ssize_t n = a.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double f, d
    for i in range(1, n):
        for j in range(i):
            f = a[i, j]
            if f != 0.0:
                for c in range(m):
                    x[i, c] -= f * x[j, c]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            f = a[i, j]
            if f != 0.0:
                for c in range(m):
                    x[i, c] -= f * x[j, c]
        d = a[i, i]
        for c in range(m):
            x[i, c] /= d
    return out.reshape(-1) if squeeze else out


def skew(A):
    cdef double[:, :] a = np.asarray(A, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = np.zeros((n, n))
    cdef double[:, ::1] s = out
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = a[i, j] - a[j, i]
            s[i, j] = v
            s[j, i] = -v
    return out


def ece_bin_stats(conf, correct, Py_ssize_t n_bins):
    cdef double[::1] cf = np.ascontiguousarray(conf, dtype=np.float64)
    cdef double[::1] cr = np.ascontiguousarray(correct, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts_arr = np.zeros(n_bins, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sconf_arr = np.zeros(n_bins)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] scorr_arr = np.zeros(n_bins)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[::1] sconf = sconf_arr
    cdef double[::1] scorr = scorr_arr
    cdef Py_ssize_t i, b, n = cf.shape[0]
    cdef double c, nb = <double>n_bins
    for i in range(n):
        c = cf[i]
        b = <Py_ssize_t>(c * nb)
        if b < 0:
            b = 0
        if b > n_bins:
            b = n_bins
        # settle against the exact edges b / n_bins
        while b > 0 and c < (<double>b) / nb:
            b -= 1
        while b < n_bins and (<double>(b + 1)) / nb <= c:
            b += 1
        if b > n_bins - 1:
            b = n_bins - 1
        counts[b] += 1
        sconf[b] += c
        scorr[b] += cr[i]
    return counts_arr, sconf_arr, scorr_arr
