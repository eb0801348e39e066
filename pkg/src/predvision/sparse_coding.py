"""Simple-cell layer: adaptive sparse coding, dictionary learning, homeostasis.

The encoder keeps the number of active cells fixed at ``N`` by adapting the
soft threshold between coordinate-descent sweeps. Dictionaries learn by
block coordinate descent on running input/activation statistics, updated at
geometrically growing intervals.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels

EPS = 1e-7
DEGENERATE_ZMAX = 1e-12


class NumericError(ArithmeticError):
    """Raised when a numeric kernel receives or would produce non-finite values."""


@dataclass(frozen=True)
class SimpleParams:
    K: int = 400
    N: int = 70
    T: int = 25

    def __post_init__(self):
        if not 0 < self.N < self.K:
            raise ValueError(f"need 0 < N < K, got N={self.N}, K={self.K}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.N > self.K / 4:
            warnings.warn(
                f"N={self.N} exceeds K/4={self.K / 4:g}; receptive fields tend to "
                "lose their localized structure in this regime",
                stacklevel=3,
            )


@dataclass
class SparseCode:
    a: np.ndarray
    lambda_final: float
    iterations_used: int
    degenerate: bool = False

    @property
    def active(self):
        return int(np.count_nonzero(self.a))


@dataclass
class Dictionary:
    """Shared Simple-cell dictionary with its learning statistics.

    ``E`` is the running activation autocorrelation used for learning and
    normalization; ``gram`` is ``D.T @ D`` used by the encoder. Pending
    statistics are kept as sums so memory does not grow with the interval.
    """

    D: np.ndarray
    B: np.ndarray
    E: np.ndarray
    s: float = 0.5
    pending_YA: np.ndarray = None
    pending_AA: np.ndarray = None
    pending_count: int = 0
    pending_steps: int = 0
    update_count: int = 0
    next_update_interval: int = 1000
    interval_growth: float = 1.1
    gram: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        m, K = self.D.shape
        if self.pending_YA is None:
            self.pending_YA = np.zeros((m, K))
        if self.pending_AA is None:
            self.pending_AA = np.zeros((K, K))
        if self.gram is None:
            self.refresh_gram()

    @classmethod
    def random(cls, m, K, rng, s0=0.5, first_interval=1000, growth=1.1):
        D = rng.standard_normal((m, K))
        D /= np.linalg.norm(D, axis=0)
        return cls(D=D, B=np.zeros((m, K)), E=np.zeros((K, K)), s=s0,
                   next_update_interval=first_interval, interval_growth=growth)

    @property
    def m(self):
        return self.D.shape[0]

    @property
    def K(self):
        return self.D.shape[1]

    def refresh_gram(self):
        g = self.D.T @ self.D
        # exact symmetry lets kernels read rows in place of columns
        self.gram = (g + g.T) / 2.0

    def activation_power(self):
        """Per-cell mean squared activation used by the homeostatic divisor.

        Before the first dictionary update the pending batch supplies the
        estimate. Cells with no recorded activity take the mean power of the
        others, so a first activation is not divided by ~0.
        """
        if self.update_count > 0:
            power = np.diag(self.E).copy()
        elif self.pending_count > 0:
            power = np.diag(self.pending_AA) / self.pending_count
        else:
            return np.ones(self.K)
        silent = power <= 0.0
        if silent.all():
            return np.ones(self.K)
        if silent.any():
            power[silent] = power[~silent].mean()
        return power


def encode_batch(X, dictionary, params, learn=False, backend=None):
    """Encode each row of ``X``; returns ``(A, lam, iters, degenerate)``.

    All rows of one batch see the same lambda scale ``s``; with ``learn`` the
    scale is then folded forward once per encoded row, in row order.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != dictionary.m:
        raise ValueError(f"expected inputs of shape (n, {dictionary.m}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite input to sparse encoder")
    Z = X @ dictionary.D
    A, lam, iters, ratio = kernels.asc_batch(
        Z, dictionary.gram, dictionary.s, params.N, params.T, backend=backend)
    degenerate = np.isnan(ratio)
    if learn:
        s = dictionary.s
        for q in ratio[~degenerate]:
            s = 0.999 * s + 0.001 * q
        dictionary.s = float(s)
    return A, lam, iters, degenerate


def asc_encode(x, dictionary, params, learn=False, backend=None):
    """Sparse code of a single input vector with exactly ``N`` active cells when
    the threshold search succeeds within ``T`` sweeps."""
    A, lam, iters, degenerate = encode_batch(
        np.asarray(x, dtype=np.float64)[None, :], dictionary, params, learn, backend)
    return SparseCode(A[0], float(lam[0]), int(iters[0]), bool(degenerate[0]))


def reconstruct(code, dictionary):
    a = code.a if isinstance(code, SparseCode) else np.asarray(code)
    if a.shape[-1] != dictionary.K:
        raise ValueError(f"code length {a.shape[-1]} != K={dictionary.K}")
    return a @ dictionary.D.T


def lasso_sweeps(x, D, lam, sweeps, trace=False):
    """Coordinate descent with a fixed threshold, using the encoder's update.

    Minimizes ``0.5*||x - D a||^2 + lam*||a||_1`` over ``a >= 0`` for unit-norm
    columns. With ``trace`` the ``(a, z)`` pair after every coordinate update is
    recorded, for checking monotonicity and the incremental ``z``.
    """
    x = np.asarray(x, dtype=np.float64)
    gram = D.T @ D
    gram = (gram + gram.T) / 2.0
    z = x @ D
    a = np.zeros(D.shape[1])
    states = [(a.copy(), z.copy())] if trace else None
    for _ in range(sweeps):
        for i in range(a.shape[0]):
            v = max(a[i] + z[i] - lam, 0.0)
            d = v - a[i]
            if d != 0.0:
                z -= d * gram[i]
                a[i] = v
            if trace:
                states.append((a.copy(), z.copy()))
    return (a, z, states) if trace else (a, z)


def accumulate(dictionary, X, A):
    """Add one step's worth of ``(input, code)`` pairs to the pending batch.

    Returns True when the pending step count reached the update interval and
    a dictionary update was applied.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    dictionary.pending_YA += X.T @ A
    dictionary.pending_AA += A.T @ A
    dictionary.pending_count += X.shape[0]
    dictionary.pending_steps += 1
    if dictionary.pending_steps >= dictionary.next_update_interval:
        update_dictionary(dictionary)
        return True
    return False


def update_dictionary(dictionary):
    """Fold the pending batch into ``B``/``E`` and run one BCD pass over columns."""
    n = max(dictionary.pending_count, 1)
    YA = dictionary.pending_YA / n
    AA = dictionary.pending_AA / n
    AA = (AA + AA.T) / 2.0
    if dictionary.update_count == 0:
        dictionary.B = YA
        dictionary.E = AA
    else:
        dictionary.B = (dictionary.B + YA) / 2.0
        dictionary.E = (dictionary.E + AA) / 2.0
    bcd_pass(dictionary.D, dictionary.B, dictionary.E)
    dictionary.refresh_gram()

    dictionary.pending_YA[:] = 0.0
    dictionary.pending_AA[:] = 0.0
    dictionary.pending_count = 0
    dictionary.pending_steps = 0
    dictionary.update_count += 1
    dictionary.next_update_interval = int(
        round(dictionary.interval_growth * dictionary.next_update_interval))


def bcd_pass(D, B, E):
    """One in-place block coordinate descent pass over the columns of ``D``."""
    for i in range(D.shape[1]):
        col = D[:, i] + (B[:, i] - D @ E[:, i]) / (E[i, i] + EPS)
        D[:, i] = col / (np.linalg.norm(col) + EPS)
    return D


def update_schedule(n_updates, first=1000, growth=1.1):
    """Cumulative step counts at which the first ``n_updates`` updates fire."""
    steps, interval, total = [], first, 0
    for _ in range(n_updates):
        total += interval
        steps.append(total)
        interval = int(round(growth * interval))
    return steps


def normalize_simple(a, dictionary):
    """Divide by the per-cell RMS and append the constant cell (length K+1)."""
    a = np.asarray(a, dtype=np.float64)
    scale = np.sqrt(dictionary.activation_power()) + EPS
    out = a / scale
    ones = np.ones(out.shape[:-1] + (1,))
    return np.concatenate([out, ones], axis=-1)


def objective(x, D, a, lam):
    """``||x - D a||^2 + lam*||a||_1``."""
    r = x - D @ a
    return float(r @ r + lam * np.abs(a).sum())


__all__ = [
    "Dictionary", "SimpleParams", "SparseCode", "NumericError", "asc_encode",
    "encode_batch", "reconstruct", "accumulate", "update_dictionary", "bcd_pass",
    "normalize_simple", "lasso_sweeps", "update_schedule", "objective",
]
