"""Backend selection for the sparse-coding inner loop.

The compiled extension is used when it imports; otherwise the pure-Python
twin runs the same arithmetic. Set ``PREDVISION_PURE_PYTHON=1`` to force the
fallback.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _fallback

_impl = _fallback
BACKEND = "python"
if os.environ.get("PREDVISION_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ascext as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

_threads = 1


def set_threads(n):
    """Number of worker threads used to encode tiles of one batch."""
    global _threads
    _threads = max(1, int(n))


def get_threads():
    return _threads


def available_backends():
    names = ["python"]
    try:
        from . import _ascext  # noqa: F401
    except ImportError:
        return names
    return ["cython", "python"]


def _module(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "cython":
        from . import _ascext
        return _ascext
    raise ValueError(f"unknown backend {backend!r}")


def asc_batch(Z, gram, s, N, T, backend=None):
    """Run the adaptive sparse coding loop on every row of ``Z``.

    Returns ``(A, lam, iters, ratio)``; ``ratio`` is ``lambda / max(z)`` per
    row (NaN for degenerate rows) and feeds the running lambda scale.
    """
    mod = _module(backend)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    gram = np.ascontiguousarray(gram, dtype=np.float64)
    n, K = Z.shape
    A = np.zeros((n, K))
    lam = np.empty(n)
    iters = np.empty(n, dtype=np.intc)
    ratio = np.empty(n)
    nthreads = min(_threads, n)
    if nthreads <= 1 or mod is _fallback:
        mod.asc_rows(Z, gram, float(s), int(N), int(T), A, lam, iters, ratio)
    else:
        bounds = np.linspace(0, n, nthreads + 1).astype(int)
        with ThreadPoolExecutor(nthreads) as pool:
            jobs = [
                pool.submit(mod.asc_rows, Z, gram, float(s), int(N), int(T),
                            A, lam, iters, ratio, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for job in jobs:
                job.result()
    return A, lam, iters, ratio
