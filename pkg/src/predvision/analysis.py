"""Receptive-field rendering and response characterization of a trained model.

Every routine here treats the model as read-only: learned parameters are
never touched and the recurrent banks are restored afterwards.
"""
from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import eigs

from .hierarchy import run
from .ingest import GRAY
from .predictive import (
    BLOCK_FEEDBACK, BLOCK_PREV, BLOCK_SIMPLE, ComplexState, complex_activate, normalize_complex,
)
from .readout import layer_activations, present
from .sparse_coding import EPS, encode_batch, normalize_simple
from .stimuli import grating


class AnalysisError(ValueError):
    pass


@contextmanager
def preserved_state(model):
    """Restore the recurrent banks and step counter on exit."""
    saved = [(lvl.output.copy(), lvl.simple.copy(), lvl.code.copy(), lvl.pending)
             for lvl in model.levels]
    count, calls = model.step_count, dict(model.calls)
    try:
        yield model
    finally:
        for lvl, (out, simple, code, pending) in zip(model.levels, saved):
            lvl.output, lvl.simple, lvl.code, lvl.pending = out, simple, code, pending
        model.step_count, model.calls = count, calls


# -- rendering -----------------------------------------------------------------

def render_patch(column, tile_size, frames=1):
    """Min-max map one dictionary column to uint8 pixels; constant columns are gray.

    Multi-frame columns are laid out left to right, oldest frame first.
    """
    col = np.asarray(column, dtype=np.float64)
    lo, hi = col.min(), col.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        px = np.full(col.shape, 128.0)
    else:
        px = (col - lo) / (hi - lo) * 255.0
    px = px.reshape(frames, tile_size, tile_size, 3)
    return np.rint(np.concatenate(list(px), axis=1)).astype(np.uint8)


def gray_patch(tile_size, frames=1):
    return np.full((tile_size, tile_size * frames, 3), 128, dtype=np.uint8)


def tile_patches(patches, cols, separator=0, fill=0):
    """Arrange equally sized patches row-major on a grid with ``cols`` columns."""
    ph, pw = patches[0].shape[:2]
    rows = -(-len(patches) // cols)
    out = np.full((rows * ph + (rows - 1) * separator, cols * pw + (cols - 1) * separator, 3),
                  fill, dtype=np.uint8)
    for i, p in enumerate(patches):
        r, c = divmod(i, cols)
        y, x = r * (ph + separator), c * (pw + separator)
        out[y:y + ph, x:x + pw] = p
    return out


def render_dictionary_grid(D, tile_size, frames=1, separator=0):
    """All K columns of a pixel-level dictionary on a ceil(sqrt(K)) grid."""
    D = np.asarray(D)
    K = D.shape[1]
    if D.shape[0] != tile_size * tile_size * 3 * frames:
        raise AnalysisError("dictionary rows do not match the tile geometry")
    cols = int(np.ceil(np.sqrt(K)))
    patches = [render_patch(D[:, i], tile_size, frames) for i in range(K)]
    return tile_patches(patches, cols, separator)


def top_indices(weights, n, absolute=False):
    """Indices of the ``n`` largest weights; ties go to the lower index."""
    w = np.abs(weights) if absolute else np.asarray(weights)
    return np.argsort(-w, kind="stable")[:n]


def complex_contributors(C, cell, top_n=16, absolute=False):
    """Simple cells with the largest weights onto one Complex cell (Simple block)."""
    J = C.shape[1]
    if not 0 <= cell < J:
        raise AnalysisError(f"Complex cell {cell} out of range 0..{J - 1}")
    block = C[BLOCK_SIMPLE * J:(BLOCK_SIMPLE + 1) * J, cell]
    idx = top_indices(block, min(top_n, J), absolute)
    return idx, block[idx]


def render_complex_contributors(model, cell, level=1, top_n=16, absolute=False, separator=1):
    """The receptive fields of the strongest Simple inputs to a Complex cell."""
    lvl = model.levels[level - 1]
    if level != 1:
        raise AnalysisError("contributor rendering needs pixel-level receptive fields (level 1)")
    idx, _ = complex_contributors(lvl.weights.C, cell, top_n, absolute)
    ts, fr, K = model.spec.tile_size, model.spec.frames_per_input, lvl.spec.K
    D = lvl.dictionary.D
    patches = [render_patch(D[:, i], ts, fr) if i < K else gray_patch(ts, fr) for i in idx]
    return tile_patches(patches, int(np.ceil(np.sqrt(top_n))), separator)


def v2_contributors(model, cell, per_child=9):
    """For each of the 4 child slices of a level-2 dictionary column, the
    level-1 Complex cells with the largest weights."""
    if len(model.levels) < 2:
        raise AnalysisError("model has no second level")
    v1, v2 = model.levels[0], model.levels[1]
    if not 0 <= cell < v2.spec.K:
        raise AnalysisError(f"level-2 cell {cell} out of range 0..{v2.spec.K - 1}")
    col = v2.dictionary.D[:, cell].reshape(4, v1.spec.J)
    return [(top_indices(col[k], per_child), col[k][top_indices(col[k], per_child)])
            for k in range(4)]


def render_v2_composite(model, cell, separator=1):
    """2x2 child boxes, each a 3x3 grid of the level-1 Simple fields paired with
    the strongest level-1 Complex inputs of a level-2 Simple cell."""
    v1 = model.levels[0]
    ts, fr, K = model.spec.tile_size, model.spec.frames_per_input, v1.spec.K
    D = v1.dictionary.D
    boxes = []
    for idx, _ in v2_contributors(model, cell):
        patches = [render_patch(D[:, i], ts, fr) if i < K else gray_patch(ts, fr) for i in idx]
        boxes.append(tile_patches(patches, 3, separator, fill=64))
    return tile_patches(boxes, 2, separator=3 * separator + 1, fill=255)


def save_png(path, image, upscale=1):
    from PIL import Image

    img = Image.fromarray(np.asarray(image, dtype=np.uint8))
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
    img.save(path)


# -- white-noise analysis ------------------------------------------------------

@dataclass
class STCResult:
    eigenvalues: np.ndarray      # descending
    excitatory: np.ndarray       # top eigenvectors, one per row
    suppressive: np.ndarray      # bottom eigenvectors, one per row
    covariance: np.ndarray
    total_weight: float
    n_frames: int


def tile_response(model, cell, level=1, tile=0, kind="complex"):
    """Response of one cell of a fresh-state level-1 tile to centered inputs.

    Frames are presented without history: context banks are zero, so the
    Complex response is driven by the Simple block alone.
    """
    if level != 1:
        raise AnalysisError("white-noise responses are defined for level-1 tiles")
    lvl = model.levels[0]
    if not 0 <= cell < lvl.spec.J:
        raise AnalysisError(f"cell {cell} out of range")
    frozen = ComplexState(lvl.state.v[tile], lvl.state.weight)

    def fn(X):
        A, _, _, _ = encode_batch(X, lvl.dictionary, lvl.spec.params, learn=False)
        a_norm = normalize_simple(A, lvl.dictionary)
        if kind == "simple":
            return a_norm[:, cell]
        P = np.zeros((len(X), 7 * lvl.spec.J))
        P[:, :lvl.spec.J] = a_norm
        c0 = complex_activate(P, lvl.weights)
        return normalize_complex(c0, frozen, lvl.weights.t, learn=False)[:, cell]

    return fn


def stc_analysis(response, dim, num_frames=500_000, seed=0, batch=10_000, n_top=5, n_bottom=3):
    """Response-weighted covariance of uniform white noise (mean not removed).

    ``response`` maps a batch of centered frames ``(B, dim)`` to non-negative
    responses. Frames are i.i.d. uniform on [0, 255] per value, minus mid-gray.
    """
    rng = np.random.default_rng(seed)
    S = np.zeros((dim, dim))
    total = 0.0
    done = 0
    while done < num_frames:
        b = min(batch, num_frames - done)
        X = rng.uniform(0.0, 255.0, size=(b, dim)) - GRAY
        c = np.asarray(response(X), dtype=np.float64)
        if np.any(c < 0):
            raise AnalysisError("responses must be non-negative")
        S += (X * c[:, None]).T @ X
        total += float(c.sum())
        done += b
    if total <= 0:
        raise AnalysisError("all responses were zero; nothing to trigger on")
    S /= total
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    return STCResult(w, V[:, :n_top].T.copy(), V[:, -n_bottom:][:, ::-1].T.copy(), S,
                     total, num_frames)


def write_spectrum(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "eigenvalue"])
        for i, v in enumerate(result.eigenvalues):
            w.writerow([i, repr(float(v))])


def render_stc(result, tile_size, frames=1, separator=1):
    """Top excitatory then bottom suppressive eigenvectors, one row each."""
    top = [render_patch(v, tile_size, frames) for v in result.excitatory]
    bottom = [render_patch(v, tile_size, frames) for v in result.suppressive]
    cols = max(len(top), len(bottom))
    blank = np.zeros_like(top[0])
    return tile_patches(top + [blank] * (cols - len(top)) + bottom + [blank] * (cols - len(bottom)),
                        cols, separator)


# -- selectivity ---------------------------------------------------------------

def selectivity(activations, cell):
    """``a[cell] / sum(a)``, or None when the layer is silent."""
    total = float(np.sum(activations))
    if total <= 0:
        return None
    return float(activations[cell]) / total


@dataclass
class SelectivityHit:
    frame_index: int
    s: float
    frame: np.ndarray


def selectivity_search(model, frames, cell, level=1, tile=0, kind="complex", stride=100, top=9):
    """Run the frozen model over ``frames``; score every ``stride``-th frame.

    Returns ``(hits, n_evaluated)`` where hits are the ``top`` best frames by
    selectivity, highest first (ties by earlier frame).
    """
    if stride < 1:
        raise AnalysisError("stride must be >= 1")
    scored = []
    n_eval = 0
    frames = list(frames)
    k = model.spec.frames_per_input
    with preserved_state(model):
        model.reset_state()
        for i, _ in enumerate(run(model, frames, learn=False)):
            index = i + k - 1   # newest frame of the window
            if index % stride:
                continue
            n_eval += 1
            act = layer_activations(model, level, kind)[tile]
            s = selectivity(act, cell)
            if s is not None:
                scored.append((-s, index))
    scored.sort()
    hits = [SelectivityHit(i, -neg, np.asarray(frames[i])) for neg, i in scored[:top]]
    return hits, n_eval


def static_selectivity(model, image, cell, level=1, tile=0, kind="complex", settle=3):
    with preserved_state(model):
        present(model, image, settle)
        act = layer_activations(model, level, kind)[tile]
    s = selectivity(act, cell)
    return 0.0 if s is None else s


# -- stimulus optimization -----------------------------------------------------

def frame_basis(frames, basis_dim, max_frames=10_000, seed=0):
    """Mean and leading principal directions (rows) of flattened frames."""
    frames = np.asarray(frames)
    rng = np.random.default_rng(seed)
    if len(frames) > max_frames:
        frames = frames[np.sort(rng.choice(len(frames), max_frames, replace=False))]
    X = frames.reshape(len(frames), -1).astype(np.float64)
    if len(X) < basis_dim:
        raise AnalysisError(f"need at least {basis_dim} frames for the eigenbasis, got {len(X)}")
    mean = X.mean(axis=0)
    _, sv, Vt = np.linalg.svd(X - mean, full_matrices=False)
    k = min(basis_dim, Vt.shape[0])
    return mean, Vt[:k], sv[:k] / np.sqrt(max(len(X) - 1, 1))


def nelder_mead(f, x0, max_iter=2000, step=1.0, xatol=1e-8, fatol=1e-12):
    """Minimize ``f`` with the standard simplex coefficients; returns the best
    point ever evaluated, which is never worse than ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), x0.shape)
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    best = {"x": x0.copy(), "f": float(f(x0))}

    def tracked(x):
        val = float(f(x))
        if not np.isfinite(val):
            return np.inf
        if val < best["f"]:
            best["x"], best["f"] = np.array(x, dtype=np.float64), val
        return val

    res = optimize.minimize(tracked, x0, method="Nelder-Mead",
                            options={"maxiter": max_iter, "initial_simplex": simplex,
                                     "xatol": xatol, "fatol": fatol, "adaptive": False})
    return best["x"], best["f"], int(res.nit)


@dataclass
class OptimizedStimulus:
    image: np.ndarray
    s: float
    s_initial: float
    iterations: int


def optimize_stimulus(model, frames, cell, level=1, tile=0, kind="complex", basis_dim=1000,
                      init=None, max_iter=2000, settle=3, seed=0):
    """Maximize a cell's selectivity over the span of the leading frame eigenvectors.

    ``init`` is the starting image (default: the best frame of a
    ``selectivity_search`` over ``frames``).
    """
    frames = list(frames)
    F = model.spec.field_size
    mean, basis, spread = frame_basis(frames, basis_dim, seed=seed)
    if init is None:
        hits, _ = selectivity_search(model, frames, cell, level, tile, kind,
                                     stride=max(1, len(frames) // 100), top=1)
        init = hits[0].frame if hits else frames[0]
    init = np.asarray(init, dtype=np.float64).ravel()
    v0 = basis @ (init - mean)

    def image_of(v):
        return np.clip(np.rint(mean + v @ basis), 0, 255).astype(np.uint8).reshape(F, F, 3)

    def negative_s(v):
        return -static_selectivity(model, image_of(v), cell, level, tile, kind, settle)

    v, fbest, nit = nelder_mead(negative_s, v0, max_iter=max_iter,
                                step=np.maximum(0.5 * spread, 1.0))
    s0 = -negative_s(v0)
    return OptimizedStimulus(image_of(v), -fbest, s0, nit)


# -- stability -----------------------------------------------------------------

def activity_gates(model, probe_frames):
    """Fraction of probe steps each Complex cell of each tile was active."""
    counts = [np.zeros((lvl.spec.n_tiles, lvl.spec.J)) for lvl in model.levels]
    n = 0
    with preserved_state(model):
        model.reset_state()
        for outputs in run(model, probe_frames, learn=False):
            for cnt, c in zip(counts, outputs):
                cnt += c > 0
            n += 1
    if n == 0:
        raise AnalysisError("probe stream is empty")
    return [c / n for c in counts]


def recurrent_jacobian(model, gates=None, joint=False, levels=None):
    """Linearized map from step ``t-1`` to step ``t`` Complex outputs.

    Includes the self-recurrent, lateral and top-down blocks; the rectifier
    derivative is replaced by ``gates`` (default: all open). Returns a sparse
    matrix per level, or one matrix over all levels when ``joint``.
    """
    levels = range(len(model.levels)) if levels is None else levels
    offsets, total = {}, 0
    for li in levels:
        offsets[li] = total
        total += model.levels[li].spec.n_tiles * model.levels[li].spec.J
    blocks = {}
    for li in levels:
        lvl = model.levels[li]
        n, J = lvl.spec.n_tiles, lvl.spec.J
        g = np.ones((n, J)) if gates is None else gates[li]
        gain = g / (np.sqrt(lvl.state.v) + EPS)          # (n, J)
        C = lvl.weights.C
        rows, cols, vals = [], [], []

        def add(dst_tile, src_offset, block_index):
            W = C[block_index * J:(block_index + 1) * J].T * gain[dst_tile][:, None]
            r, c = np.nonzero(W)
            rows.append(dst_tile * J + r)
            cols.append(src_offset + c)
            vals.append(W[r, c])

        base = offsets[li] if joint else 0
        for t in range(n):
            add(t, base + t * J, BLOCK_PREV)
            for k, nb in enumerate(lvl.neighbors[t]):
                if nb < n:
                    add(t, base + nb * J, BLOCK_PREV + 1 + k)
            if joint and lvl.parent is not None and (li + 1) in offsets:
                add(t, offsets[li + 1] + lvl.parent[t] * model.levels[li + 1].spec.J,
                    BLOCK_FEEDBACK)
        r = np.concatenate(rows) if rows else np.zeros(0, int)
        c = np.concatenate(cols) if cols else np.zeros(0, int)
        v = np.concatenate(vals) if vals else np.zeros(0)
        size = total if joint else n * J
        blocks[li] = (base + r, c, v, size) if joint else (r, c, v, size)
    if joint:
        r = np.concatenate([b[0] for b in blocks.values()])
        c = np.concatenate([b[1] for b in blocks.values()])
        v = np.concatenate([b[2] for b in blocks.values()])
        return csr_matrix((v, (r, c)), shape=(total, total))
    return {li: csr_matrix((b[2], (b[0], b[1])), shape=(b[3], b[3])) for li, b in blocks.items()}


def spectrum(M, dense_limit=3000, k=8):
    """Eigenvalues of a sparse matrix: all of them when small, else the
    largest-real-part and largest-magnitude few."""
    if M.shape[0] <= dense_limit:
        return np.linalg.eigvals(M.toarray())
    if M.nnz == 0:
        return np.zeros(1)
    lr = eigs(M, k=k, which="LR", return_eigenvectors=False)
    lm = eigs(M, k=k, which="LM", return_eigenvectors=False)
    return np.concatenate([lr, lm])


def stability_report(model, probe_frames=None, gates=None, dense_limit=3000):
    """Eigenvalue summary of the linearized recurrence, per level and joint."""
    if gates is None and probe_frames is not None:
        gates = activity_gates(model, probe_frames)
    report = {"levels": []}
    for li, M in recurrent_jacobian(model, gates).items():
        ev = spectrum(M, dense_limit)
        report["levels"].append({
            "level": li + 1,
            "size": int(M.shape[0]),
            "max_real": float(np.max(ev.real)),
            "spectral_radius": float(np.max(np.abs(ev))),
            "eigenvalues": [[float(e.real), float(e.imag)] for e in ev[np.argsort(-ev.real)][:50]],
        })
    Mj = recurrent_jacobian(model, gates, joint=True)
    ev = spectrum(Mj, dense_limit)
    report["joint"] = {"size": int(Mj.shape[0]), "max_real": float(np.max(ev.real)),
                       "spectral_radius": float(np.max(np.abs(ev)))}
    report["max_real"] = max(report["joint"]["max_real"],
                             *(lv["max_real"] for lv in report["levels"]))
    report["stable"] = report["max_real"] < 1.0
    return report


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


# -- phase invariance ----------------------------------------------------------

def modulation_index(responses):
    """``(max - min) / (max + min)`` along the last axis; NaN where silent."""
    r = np.asarray(responses, dtype=np.float64)
    hi, lo = r.max(axis=-1), r.min(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(hi + lo > 0, (hi - lo) / (hi + lo), np.nan)


def phase_modulation(model, level=1, orientations=8, periods=(4.0, 6.0, 8.0, 12.0),
                     phase_steps=16, warmup=16, cycles=2, contrast=1.0):
    """Median phase modulation of Simple and Complex cells under drifting gratings.

    Each condition drifts a full-field grating through ``phase_steps``
    phases per cycle. For every (tile, cell) the condition with the largest
    mean response is kept; its responses are averaged over ``cycles`` and
    the modulation of that one-cycle profile is measured. Returns
    ``(simple_median, complex_median, details)``.
    """
    F = model.spec.field_size
    lvl = model.levels[level - 1]
    K = lvl.spec.K
    best_mean = {"simple": None, "complex": None}
    best_mod = {"simple": None, "complex": None}
    with preserved_state(model):
        for o in range(orientations):
            theta = np.pi * o / orientations
            for period in periods:
                frames = [grating(F, theta, period, -2 * np.pi * t / phase_steps, contrast)
                          for t in range(warmup + cycles * phase_steps)]
                model.reset_state()
                rec = {"simple": [], "complex": []}
                for i, _ in enumerate(run(model, frames, learn=False)):
                    if i + model.spec.frames_per_input - 1 >= warmup:
                        rec["simple"].append(layer_activations(model, level, "simple"))
                        rec["complex"].append(layer_activations(model, level, "complex")[:, :K])
                for kind, seq in rec.items():
                    R = np.asarray(seq)                      # (time, tiles, K)
                    R = R[: (len(R) // phase_steps) * phase_steps]
                    R = R.reshape(-1, phase_steps, *R.shape[1:])
                    mean = R.mean(axis=(0, 1))
                    mod = modulation_index(np.moveaxis(R.mean(axis=0), 0, -1)) \
                        if len(R) else np.full(mean.shape, np.nan)
                    if best_mean[kind] is None:
                        best_mean[kind], best_mod[kind] = mean, mod
                    else:
                        better = mean > best_mean[kind]
                        best_mean[kind] = np.where(better, mean, best_mean[kind])
                        best_mod[kind] = np.where(better, mod, best_mod[kind])
    out = {}
    for kind in ("simple", "complex"):
        mods = best_mod[kind][best_mean[kind] > 0]
        mods = mods[np.isfinite(mods)]
        out[kind] = float(np.median(mods)) if mods.size else float("nan")
    details = {"simple_cells": int(np.sum(best_mean["simple"] > 0)),
               "complex_cells": int(np.sum(best_mean["complex"] > 0))}
    return out["simple"], out["complex"], details
