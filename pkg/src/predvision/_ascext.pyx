# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled adaptive sparse coding sweeps.

Mirrors ``predvision._fallback.asc_rows`` operation for operation so both
backends produce bit-identical codes.
"""
from libc.math cimport NAN

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF DEGENERATE_ZMAX = 1e-12
DEF LAMBDA_FLOOR = 1e-12


cdef void _encode_row(const double[::1] z0, const double[:, ::1] gram,
                      double s, int N, int T,
                      double[::1] z, double[::1] a,
                      double* lam_out, int* iters_out, double* ratio_out) noexcept nogil:
    cdef Py_ssize_t K = z0.shape[0]
    cdef Py_ssize_t i, j
    cdef double zmax = z0[0]
    cdef double lam, last_lam, v, d
    cdef int t, nnz

    for i in range(K):
        z[i] = z0[i]
        a[i] = 0.0
        if z0[i] > zmax:
            zmax = z0[i]

    if zmax <= DEGENERATE_ZMAX:
        lam_out[0] = s * LAMBDA_FLOOR
        iters_out[0] = T
        ratio_out[0] = NAN
        return

    lam = zmax * s
    last_lam = lam
    t = 1
    nnz = 0
    while nnz != N and t <= T:
        for i in range(K):
            v = a[i] + z[i] - lam
            if v < 0.0:
                v = 0.0
            d = v - a[i]
            if d != 0.0:
                for j in range(K):
                    z[j] = z[j] - d * gram[i, j]
                if a[i] == 0.0:
                    nnz += 1
                elif v == 0.0:
                    nnz -= 1
                a[i] = v
        last_lam = lam
        if nnz > N:
            lam = lam * (1.0 + 2.0 / t)
        else:
            lam = lam * (1.0 - 0.75 / t)
        t += 1

    lam_out[0] = last_lam
    iters_out[0] = t - 1
    ratio_out[0] = last_lam / zmax


def asc_rows(const double[:, ::1] Z, const double[:, ::1] gram, double s,
             int N, int T, double[:, ::1] A, double[::1] lam,
             int[::1] iters, double[::1] ratio,
             Py_ssize_t start=0, Py_ssize_t stop=-1):
    """Encode rows ``start:stop`` of ``Z = X @ D`` in place into ``A``."""
    cdef Py_ssize_t n = Z.shape[0]
    cdef Py_ssize_t K = Z.shape[1]
    cdef Py_ssize_t r
    cdef double[::1] z = np.empty(K, dtype=np.float64)
    if stop < 0:
        stop = n
    with nogil:
        for r in range(start, stop):
            _encode_row(Z[r], gram, s, N, T, z, A[r], &lam[r], &iters[r], &ratio[r])
