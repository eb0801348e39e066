"""Tile pyramid: wiring, per-step dataflow, training loop and checkpoints.

Within a step, levels run bottom-up and each level's Simple input is the
current-step Complex output of its 2x2 children. Lateral and top-down context
always come from the previous step: outputs of step ``t`` are only published
to the context banks once every level has finished.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .ingest import StreamConfig, frame_windows, tile_and_center
from .predictive import (
    ComplexState, ComplexWeights, LearningConstants, complex_activate, complex_learn,
    normalize_complex,
)
from .sparse_coding import (
    Dictionary, NumericError, SimpleParams, accumulate, encode_batch, normalize_simple,
)

log = logging.getLogger(__name__)

# child order inside a parent's input vector: top-left, top-right, bottom-left, bottom-right
CHILD_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


class TileError(RuntimeError):
    """An encoder failure, tagged with the tile that raised it."""

    def __init__(self, level, tile, cause):
        super().__init__(f"level {level} tile {tile}: {cause}")
        self.level = level
        self.tile = tile
        self.cause = cause


@dataclass(frozen=True)
class LevelSpec:
    index: int
    tiles_x: int
    tiles_y: int
    input_dim: int
    K: int = 400
    N: int = 70
    T: int = 25

    @property
    def J(self):
        return self.K + 1

    @property
    def n_tiles(self):
        return self.tiles_x * self.tiles_y

    @property
    def params(self):
        return SimpleParams(self.K, self.N, self.T)


@dataclass(frozen=True)
class HierarchySpec:
    levels: tuple
    field_size: int = 80
    tile_size: int = 10
    frames_per_input: int = 1
    context: bool = True
    gate_threshold: float = 0.0
    grad_reduce: str = "mean"
    first_update_interval: int = 1000
    interval_growth: float = 1.1
    s0: float = 0.5
    weak_decay: float = 1e-5
    self_penalty: float = 0.9
    gate_leak: float = 0.01
    rate_offset: float = 10000.0
    rate_divisor: float = 10.0

    @classmethod
    def default(cls, field_size=80, tile_size=10, K=400, N=70, T=25,
                frames_per_input=1, n_levels=None, **options):
        grid = field_size // tile_size
        if field_size % tile_size or grid & (grid - 1):
            raise ValueError("field_size / tile_size must be a power of two")
        depth = grid.bit_length()
        n_levels = depth if n_levels is None else n_levels
        if n_levels != depth:
            raise ValueError(f"a {grid}x{grid} bottom grid needs {depth} levels to reach 1x1")
        levels, input_dim = [], tile_size * tile_size * 3 * frames_per_input
        for i in range(n_levels):
            g = grid >> i
            levels.append(LevelSpec(i + 1, g, g, input_dim, K, N, T))
            input_dim = 4 * (K + 1)
        spec = cls(tuple(levels), field_size, tile_size, frames_per_input, **options)
        spec.validate()
        return spec

    def validate(self):
        if not self.levels:
            raise ValueError("hierarchy needs at least one level")
        first = self.levels[0]
        grid = self.field_size // self.tile_size
        if self.field_size % self.tile_size or (first.tiles_x, first.tiles_y) != (grid, grid):
            raise ValueError("bottom level grid does not tile the visual field")
        if first.input_dim != self.tile_size ** 2 * 3 * self.frames_per_input:
            raise ValueError("bottom level input_dim does not match the tile size")
        for lower, upper in zip(self.levels, self.levels[1:]):
            if (lower.tiles_x, lower.tiles_y) != (2 * upper.tiles_x, 2 * upper.tiles_y):
                raise ValueError(f"level {upper.index} grid must be half of level {lower.index}")
            if upper.input_dim != 4 * lower.J:
                raise ValueError(f"level {upper.index} input_dim must be 4*J of its children")
        top = self.levels[-1]
        if (top.tiles_x, top.tiles_y) != (1, 1):
            raise ValueError("top level must be a single tile")
        if self.grad_reduce not in ("mean", "sum"):
            raise ValueError("grad_reduce must be 'mean' or 'sum'")

    @property
    def stream_config(self):
        return StreamConfig(self.field_size, self.tile_size, self.frames_per_input)

    @property
    def constants(self):
        return LearningConstants(self.weak_decay, self.self_penalty, self.gate_leak,
                                 self.rate_offset, self.rate_divisor)

    @property
    def n_tiles(self):
        return sum(lv.n_tiles for lv in self.levels)

    def neuron_count(self):
        """Simple plus Complex cells, K of each per tile."""
        return sum(lv.n_tiles * 2 * lv.K for lv in self.levels)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["levels"] = [dataclasses.asdict(lv) for lv in self.levels]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["levels"] = tuple(LevelSpec(**lv) for lv in d["levels"])
        spec = cls(**d)
        spec.validate()
        return spec


def _grid_neighbors(tx, ty):
    """Row-major neighbour table (north, east, south, west); ``n`` marks absent."""
    n = tx * ty
    table = np.full((n, 4), n, dtype=np.intp)
    for y in range(ty):
        for x in range(tx):
            i = y * tx + x
            if y > 0:
                table[i, 0] = i - tx
            if x < tx - 1:
                table[i, 1] = i + 1
            if y < ty - 1:
                table[i, 2] = i + tx
            if x > 0:
                table[i, 3] = i - 1
    return table


@dataclass
class Level:
    spec: LevelSpec
    dictionary: Dictionary
    weights: ComplexWeights
    state: ComplexState
    neighbors: np.ndarray
    children: np.ndarray = None
    parent: np.ndarray = None
    output: np.ndarray = None
    simple: np.ndarray = None
    code: np.ndarray = None
    pending: tuple = None

    def __post_init__(self):
        n, J = self.spec.n_tiles, self.spec.J
        if self.output is None:
            self.output = np.zeros((n, J))
        if self.simple is None:
            self.simple = np.zeros((n, J))
        if self.code is None:
            self.code = np.zeros((n, self.spec.K))


@dataclass
class Model:
    spec: HierarchySpec
    levels: list
    seed: int = 0
    step_count: int = 0
    calls: dict = field(default_factory=lambda: {"encode": 0, "activate": 0})

    @property
    def stream_config(self):
        return self.spec.stream_config

    def reset_state(self):
        """Clear the context banks and held predictions; weights and
        normalization statistics are kept."""
        for lvl in self.levels:
            lvl.output[:] = 0.0
            lvl.simple[:] = 0.0
            lvl.code[:] = 0.0
            lvl.pending = None

    def step(self, inputs, learn=False):
        return step(self, inputs, learn)

    def save(self, path):
        save_checkpoint(self, path)

    def weight_checksum(self):
        """Hash of every learned parameter, for frozen-model checks."""
        import hashlib
        h = hashlib.sha256()
        for lvl in self.levels:
            d = lvl.dictionary
            for arr in (d.D, d.B, d.E, lvl.weights.C, lvl.state.v):
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update(np.float64(d.s).tobytes())
        return h.hexdigest()


def build(spec, seed=0):
    """Deterministically initialize a model; all context banks start at zero."""
    spec.validate()
    rng = np.random.default_rng(seed)
    levels = []
    for i, ls in enumerate(spec.levels):
        dictionary = Dictionary.random(
            ls.input_dim, ls.K, rng, s0=spec.s0,
            first_interval=spec.first_update_interval, growth=spec.interval_growth)
        lvl = Level(
            spec=ls,
            dictionary=dictionary,
            weights=ComplexWeights.zeros(ls.J),
            state=ComplexState.fresh(ls.n_tiles, ls.J),
            neighbors=_grid_neighbors(ls.tiles_x, ls.tiles_y),
        )
        levels.append(lvl)
    for lower, upper in zip(levels, levels[1:]):
        tx = upper.spec.tiles_x
        children = np.empty((upper.spec.n_tiles, 4), dtype=np.intp)
        for y in range(upper.spec.tiles_y):
            for x in range(tx):
                for k, (dy, dx) in enumerate(CHILD_OFFSETS):
                    children[y * tx + x, k] = (2 * y + dy) * lower.spec.tiles_x + 2 * x + dx
        upper.children = children
        parent = np.empty(lower.spec.n_tiles, dtype=np.intp)
        for p, kids in enumerate(children):
            parent[kids] = p
        lower.parent = parent
    return Model(spec, levels, seed=seed)


def _bottom_inputs(model, inputs):
    ls = model.spec.levels[0]
    arr = inputs
    if isinstance(inputs, list) or (isinstance(inputs, np.ndarray) and inputs.dtype == np.uint8):
        arr = tile_and_center(inputs, model.stream_config)
    arr = np.asarray(arr, dtype=np.float64)
    return arr.reshape(ls.n_tiles, ls.input_dim)


class StepMetrics:
    """Per-level running sums of reconstruction and prediction error."""

    def __init__(self, n_levels):
        self.recon = np.zeros(n_levels)
        self.pred = np.zeros(n_levels)
        self.n_recon = np.zeros(n_levels, dtype=np.int64)
        self.n_pred = np.zeros(n_levels, dtype=np.int64)

    def rows(self, step):
        out = []
        for i in range(len(self.recon)):
            recon = self.recon[i] / self.n_recon[i] if self.n_recon[i] else float("nan")
            pred = self.pred[i] / self.n_pred[i] if self.n_pred[i] else float("nan")
            out.append({"step": step, "level": i + 1, "recon_mse": recon, "pred_mse": pred})
        return out


def step(model, inputs, learn=False, metrics=None):
    """Advance the whole hierarchy by one frame.

    ``inputs`` is a frame window (list of uint8 frames), a single uint8 frame,
    or already tiled and centered bottom-level vectors. Returns the list of
    per-level normalized Complex outputs (tiles x J).
    """
    spec = model.spec
    constants = spec.constants
    X = _bottom_inputs(model, inputs)
    outputs, simples, codes, pendings = [], [], [], []
    for li, lvl in enumerate(model.levels):
        ls = lvl.spec
        n, J = ls.n_tiles, ls.J
        if li > 0:
            X = outputs[li - 1][lvl.children].reshape(n, ls.input_dim)
        try:
            A, _, _, _ = encode_batch(X, lvl.dictionary, ls.params, learn=learn)
        except (NumericError, ValueError) as exc:
            bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
            raise TileError(ls.index, int(bad[0]) if bad.size else None, exc) from exc
        model.calls["encode"] += n
        D_used = lvl.dictionary.D
        if learn:
            accumulate(lvl.dictionary, X, A)
        a_norm = normalize_simple(A, lvl.dictionary)

        if metrics is not None:
            resid = X - A @ D_used.T
            metrics.recon[li] += float(np.mean(resid * resid))
            metrics.n_recon[li] += 1
            if model.step_count > 0:
                diff = a_norm - lvl.output
                metrics.pred[li] += float(np.mean(diff * diff))
                metrics.n_pred[li] += 1

        if learn:
            if lvl.pending is not None:
                P_prev, c_prev_pred = lvl.pending
                complex_learn(lvl.weights, P_prev, c_prev_pred, a_norm,
                              gate_threshold=spec.gate_threshold, reduce=spec.grad_reduce,
                              constants=constants)

        P = _context(model, li, a_norm)
        c0 = complex_activate(P, lvl.weights)
        model.calls["activate"] += n
        c = normalize_complex(c0, lvl.state, lvl.weights.t, learn=learn, constants=constants)
        if not np.all(np.isfinite(c)):
            raise NumericError(f"non-finite Complex output at level {ls.index}")
        outputs.append(c)
        simples.append(a_norm)
        codes.append(A)
        pendings.append((P, c) if learn else None)

    for lvl, c, a_norm, A, pend in zip(model.levels, outputs, simples, codes, pendings):
        lvl.output = c
        lvl.simple = a_norm
        lvl.code = A
        lvl.pending = pend
    model.step_count += 1
    return outputs


def _context(model, li, a_norm):
    lvl = model.levels[li]
    n, J = lvl.spec.n_tiles, lvl.spec.J
    P = np.zeros((n, 7 * J))
    P[:, :J] = a_norm
    P[:, J:2 * J] = lvl.output
    if model.spec.context:
        bank = np.vstack([lvl.output, np.zeros((1, J))])
        P[:, 2 * J:6 * J] = bank[lvl.neighbors].reshape(n, 4 * J)
        if lvl.parent is not None:
            P[:, 6 * J:] = model.levels[li + 1].output[lvl.parent]
    return P


def _windows(model, frames):
    k = model.spec.frames_per_input
    for window in frame_windows(frames, k):
        yield window if k > 1 else window[0]


def run(model, frames, learn=False):
    """Step through ``frames``; yields per-level outputs after each step."""
    for window in _windows(model, frames):
        yield step(model, window, learn=learn)


def train_on_stream(model, frames, passes=1, log_every=1000, metrics_path=None,
                    abort_checkpoint=None, progress=None):
    """Run learning steps over ``frames`` ``passes`` times.

    ``frames`` is a re-iterable sequence of field-sized uint8 frames or a
    zero-argument callable returning a fresh iterable. Returns the metrics
    rows (one per level per ``log_every`` steps, plus a final partial block).
    """
    rows = []
    metrics = StepMetrics(len(model.levels))
    block = 0
    start = time.perf_counter()
    steps = 0
    try:
        for _ in range(passes):
            source = frames() if callable(frames) else frames
            for window in _windows(model, source):
                step(model, window, learn=True, metrics=metrics)
                steps += 1
                block += 1
                if block == log_every:
                    rows += metrics.rows(model.step_count)
                    metrics = StepMetrics(len(model.levels))
                    block = 0
                    if progress is not None:
                        progress(model.step_count, rows[-len(model.levels):])
    except BaseException:
        if abort_checkpoint is not None:
            save_checkpoint(model, abort_checkpoint)
            log.error("training aborted at step %d; state saved to %s",
                      model.step_count, abort_checkpoint)
        raise
    if block:
        rows += metrics.rows(model.step_count)
    elapsed = time.perf_counter() - start
    log.info("trained %d steps in %.1fs (%.1f steps/s)", steps, elapsed,
             steps / elapsed if elapsed > 0 else float("inf"))
    if metrics_path is not None:
        write_metrics(metrics_path, rows)
    return model, rows


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "level", "recon_mse", "pred_mse"])
        writer.writeheader()
        writer.writerows(rows)


# -- checkpoints -------------------------------------------------------------

_DICT_ARRAYS = ("D", "B", "E", "gram", "pending_YA", "pending_AA")
_DICT_SCALARS = ("s", "pending_count", "pending_steps", "update_count",
                 "next_update_interval", "interval_growth")
_LEVEL_ARRAYS = ("output", "simple", "code")


def model_chunks(model):
    chunks = {
        "spec": ckpt.encode_json(model.spec.to_dict()),
        "model": ckpt.encode_json({"seed": model.seed, "step_count": model.step_count}),
    }
    for lvl in model.levels:
        pre = f"L{lvl.spec.index}/"
        d = lvl.dictionary
        chunks[pre + "dict"] = ckpt.encode_json({k: getattr(d, k) for k in _DICT_SCALARS})
        for name in _DICT_ARRAYS:
            chunks[pre + "dict/" + name] = ckpt.encode_array(getattr(d, name))
        chunks[pre + "complex"] = ckpt.encode_json(
            {"t": lvl.weights.t, "weight": lvl.state.weight,
             "has_pending": lvl.pending is not None})
        chunks[pre + "complex/C"] = ckpt.encode_array(lvl.weights.C)
        chunks[pre + "complex/v"] = ckpt.encode_array(lvl.state.v)
        for name in _LEVEL_ARRAYS:
            chunks[pre + "bank/" + name] = ckpt.encode_array(getattr(lvl, name))
        if lvl.pending is not None:
            chunks[pre + "bank/pending_P"] = ckpt.encode_array(lvl.pending[0])
            chunks[pre + "bank/pending_c"] = ckpt.encode_array(lvl.pending[1])
    return chunks


def save_checkpoint(model, path, extra=None):
    chunks = model_chunks(model)
    if extra:
        chunks.update(extra)
    ckpt.write_container(path, chunks)


def model_from_chunks(chunks):
    try:
        spec = HierarchySpec.from_dict(ckpt.decode_json(chunks["spec"]))
        meta = ckpt.decode_json(chunks["model"])
        model = build(spec, seed=meta["seed"])
        model.step_count = meta["step_count"]
        for lvl in model.levels:
            pre = f"L{lvl.spec.index}/"
            scalars = ckpt.decode_json(chunks[pre + "dict"])
            arrays = {k: ckpt.decode_array(chunks[pre + "dict/" + k]) for k in _DICT_ARRAYS}
            lvl.dictionary = Dictionary(**arrays, **scalars)
            cmeta = ckpt.decode_json(chunks[pre + "complex"])
            lvl.weights = ComplexWeights(ckpt.decode_array(chunks[pre + "complex/C"]), cmeta["t"])
            lvl.state = ComplexState(ckpt.decode_array(chunks[pre + "complex/v"]), cmeta["weight"])
            for name in _LEVEL_ARRAYS:
                setattr(lvl, name, ckpt.decode_array(chunks[pre + "bank/" + name]))
            if cmeta["has_pending"]:
                lvl.pending = (ckpt.decode_array(chunks[pre + "bank/pending_P"]),
                               ckpt.decode_array(chunks[pre + "bank/pending_c"]))
    except KeyError as exc:
        raise ckpt.CheckpointError(f"checkpoint is missing chunk {exc}") from exc
    return model


def load_checkpoint(path):
    return model_from_chunks(ckpt.read_container(path))
