"""Complex-cell layer: context-driven prediction of the next Simple response.

Context rows are laid out as seven blocks of ``J`` values::

    [simple | previous complex | north | east | south | west | feedback]

Absent neighbours and absent feedback are zero blocks, which lets every tile
of a level share one weight matrix ``C`` of shape ``(7J, J)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse_coding import EPS, NumericError

N_BLOCKS = 7
BLOCK_SIMPLE, BLOCK_PREV, BLOCK_NORTH, BLOCK_EAST, BLOCK_SOUTH, BLOCK_WEST, BLOCK_FEEDBACK = range(7)
DIRECTIONS = ("north", "east", "south", "west")

WEAK_DECAY = 1e-5
SELF_PENALTY = 0.9
GATE_LEAK = 0.01
RATE_OFFSET = 10000.0
RATE_DIVISOR = 10.0


@dataclass(frozen=True)
class LearningConstants:
    weak_decay: float = WEAK_DECAY
    self_penalty: float = SELF_PENALTY
    gate_leak: float = GATE_LEAK
    rate_offset: float = RATE_OFFSET
    rate_divisor: float = RATE_DIVISOR


DEFAULT_CONSTANTS = LearningConstants()


def learning_rate(t, constants=DEFAULT_CONSTANTS):
    return 1.0 / (constants.rate_offset + t / constants.rate_divisor)


@dataclass
class ComplexWeights:
    C: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, J):
        return cls(np.zeros((N_BLOCKS * J, J)))

    @property
    def J(self):
        return self.C.shape[1]

    def block(self, index):
        J = self.J
        return self.C[index * J:(index + 1) * J]


@dataclass
class ComplexState:
    """Per-tile running variances ``v`` (rows = tiles) and their total weight.

    ``v`` holds a bias-corrected running mean of squared responses: ``weight``
    tracks how much of the exponential window has been filled, so the first
    observation replaces the neutral starting value.
    """

    v: np.ndarray
    weight: float = 0.0

    @classmethod
    def fresh(cls, n_tiles, J):
        return cls(np.ones((n_tiles, J)))


def assemble_context(a, c_prev, laterals=(None, None, None, None), feedback=None):
    """Context vector for one tile; missing laterals or feedback become zeros.

    ``laterals`` is ordered north, east, south, west, or a mapping keyed by
    those names.
    """
    a = np.asarray(a, dtype=np.float64)
    J = a.shape[0]
    if isinstance(laterals, dict):
        laterals = [laterals.get(name) for name in DIRECTIONS]
    laterals = list(laterals)
    if len(laterals) > 4:
        raise ValueError("at most 4 lateral neighbours")
    laterals += [None] * (4 - len(laterals))
    blocks = [a, c_prev, *laterals, feedback]
    p0 = np.zeros(N_BLOCKS * J)
    for k, blk in enumerate(blocks):
        if blk is None:
            continue
        blk = np.asarray(blk, dtype=np.float64)
        if blk.shape != (J,):
            raise ValueError(f"context block {k} has shape {blk.shape}, expected ({J},)")
        p0[k * J:(k + 1) * J] = blk
    return p0


def complex_activate(p0, weights):
    """Half-rectified linear prediction ``max(p0 @ C, 0)``; accepts row batches."""
    return np.maximum(np.asarray(p0) @ weights.C, 0.0)


def complex_learn(weights, p0, c_pred, a_next, gate_threshold=0.0, reduce="mean",
                  constants=DEFAULT_CONSTANTS):
    """One shared-weight gradient step from one or more tiles.

    Each tile's outer-product gradient is scaled so its largest entry is at
    most 1 before tiles are averaged (or summed). Non-finite inputs raise
    ``NumericError`` and leave ``weights`` untouched.
    """
    P = np.atleast_2d(np.asarray(p0, dtype=np.float64))
    c_pred = np.atleast_2d(np.asarray(c_pred, dtype=np.float64))
    a_next = np.atleast_2d(np.asarray(a_next, dtype=np.float64))
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(c_pred))
            and np.all(np.isfinite(a_next))):
        raise NumericError("non-finite input to complex learning step")
    J = weights.J
    if P.shape[1] != N_BLOCKS * J or c_pred.shape[1] != J or a_next.shape[1] != J:
        raise ValueError("context/prediction shapes do not match the weight matrix")

    r = learning_rate(weights.t, constants)
    gate = (c_pred > gate_threshold).astype(np.float64)
    d = (a_next - c_pred) * (gate + constants.gate_leak)
    peak = np.abs(P).max(axis=1) * np.abs(d).max(axis=1)
    scale = 1.0 / np.maximum(1.0, peak + EPS)
    G = (P * scale[:, None]).T @ d
    if reduce == "mean":
        G /= P.shape[0]
    elif reduce != "sum":
        raise ValueError(f"unknown reduction {reduce!r}")

    C = weights.C
    C *= 1.0 - constants.weak_decay * r
    idx = np.arange(J)
    C[idx, idx] *= 1.0 - constants.self_penalty * r
    C += r * G
    weights.t += 1
    return weights


def normalize_complex(c0, state, t, learn=True, constants=DEFAULT_CONSTANTS):
    """Divide responses by their running RMS; ``learn`` updates the estimate."""
    c0 = np.asarray(c0, dtype=np.float64)
    if learn:
        r = learning_rate(t, constants)
        state.weight = (1.0 - r) * state.weight + r
        state.v += (r / state.weight) * (c0 * c0 - state.v)
    return c0 / (np.sqrt(state.v) + EPS)


def prediction_error(a_next, c_pred):
    diff = np.asarray(a_next) - np.asarray(c_pred)
    return float(np.mean(diff * diff))
