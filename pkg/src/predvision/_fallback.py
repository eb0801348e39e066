"""Pure-Python adaptive sparse coding sweeps.

Reference twin of the compiled ``_ascext`` module; used when the extension
is not built or ``PREDVISION_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np

DEGENERATE_ZMAX = 1e-12
LAMBDA_FLOOR = 1e-12


def _encode_row(z0, gram, s, N, T, a):
    z = z0.copy()
    a[:] = 0.0
    zmax = float(z0.max())
    if zmax <= DEGENERATE_ZMAX:
        return s * LAMBDA_FLOOR, T, math.nan

    K = z.shape[0]
    lam = zmax * s
    last_lam = lam
    t = 1
    nnz = 0
    while nnz != N and t <= T:
        for i in range(K):
            ai = a[i]
            v = ai + z[i] - lam
            if v < 0.0:
                v = 0.0
            d = v - ai
            if d != 0.0:
                z -= d * gram[i]
                if ai == 0.0:
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
    return last_lam, t - 1, last_lam / zmax


def asc_rows(Z, gram, s, N, T, A, lam, iters, ratio, start=0, stop=-1):
    """Encode rows ``start:stop`` of ``Z = X @ D`` in place into ``A``."""
    if stop < 0:
        stop = Z.shape[0]
    s = float(s)
    for r in range(start, stop):
        lam[r], iters[r], ratio[r] = _encode_row(Z[r], gram, s, N, T, A[r])
