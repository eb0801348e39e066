"""Windowed heatmap tracker and Success/Accuracy scoring.

The tracker crops a square window around the current target estimate,
resizes it to the visual field, steps the frozen hierarchy, fuses the
per-level heatmaps and extracts a box from the fused map. Boxes are
``(x, y, w, h)`` rows; absence is a row of NaN.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .ingest import resize_frame
from .readout import ReadoutError, emit_heatmap, present, train_heatmap
from .hierarchy import step

ABSENT = np.array([np.nan] * 4)


@dataclass
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    present: bool = True

    def __post_init__(self):
        if self.present and (self.w < 0 or self.h < 0):
            raise ValueError("box width and height must be non-negative")

    @classmethod
    def absent(cls):
        return cls(np.nan, np.nan, np.nan, np.nan, present=False)

    @classmethod
    def from_row(cls, row):
        row = np.asarray(row, dtype=np.float64)
        if np.any(np.isnan(row)):
            return cls.absent()
        return cls(*row)

    def as_row(self):
        return np.array([self.x, self.y, self.w, self.h]) if self.present else ABSENT.copy()

    @property
    def center(self):
        return self.x + self.w / 2.0, self.y + self.h / 2.0


def iou(a, b):
    """Intersection over union of two ``(x, y, w, h)`` boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def frame_overlaps(pred, gt):
    """Per-frame overlap with the absence convention: both absent -> 1,
    exactly one absent -> 0."""
    pred, gt = np.atleast_2d(pred), np.atleast_2d(gt)
    out = np.empty(len(gt))
    for i, (p, g) in enumerate(zip(pred, gt)):
        pa, ga = np.any(np.isnan(p)), np.any(np.isnan(g))
        if pa and ga:
            out[i] = 1.0
        elif pa or ga:
            out[i] = 0.0
        else:
            out[i] = iou(p, g)
    return out


@dataclass
class TrackRun:
    """Predicted and ground-truth boxes; frame 0 is the priming frame."""

    predicted: np.ndarray
    groundtruth: np.ndarray

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64).reshape(-1, 4)
        self.groundtruth = np.asarray(self.groundtruth, dtype=np.float64).reshape(-1, 4)
        if len(self.predicted) != len(self.groundtruth):
            raise ValueError(f"{len(self.predicted)} predicted boxes vs "
                             f"{len(self.groundtruth)} ground-truth boxes")
        if len(self.predicted) < 2:
            raise ValueError("a run needs the priming frame plus at least one scored frame")

    @property
    def scored(self):
        return self.predicted[1:], self.groundtruth[1:]


def success_curve(run, thresholds=None):
    """Fraction of scored frames whose overlap exceeds each threshold."""
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 101)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    ov = frame_overlaps(*run.scored)
    return np.array([np.mean(ov > t) for t in thresholds])


def scale_box(box, factor):
    x, y, w, h = box
    cx, cy = x + w / 2.0, y + h / 2.0
    return np.array([cx - w * factor / 2.0, cy - h * factor / 2.0, w * factor, h * factor])


def accuracy_curve(run, scales=None):
    """Center-inside hits plus correct absences, per ground-truth scale factor.

    The ground-truth box is scaled about its center; its boundary counts as
    inside.
    """
    if scales is None:
        scales = np.linspace(1.0, 4.0, 31)
    pred, gt = run.scored
    out = []
    for s in np.asarray(scales, dtype=np.float64):
        hits = 0
        for p, g in zip(pred, gt):
            pa, ga = np.any(np.isnan(p)), np.any(np.isnan(g))
            if pa or ga:
                hits += pa and ga
                continue
            x, y, w, h = scale_box(g, s)
            cx, cy = p[0] + p[2] / 2.0, p[1] + p[3] / 2.0
            hits += (x <= cx <= x + w) and (y <= cy <= y + h)
        out.append(hits / len(gt))
    return np.array(out)


def area_under(values):
    """Mean of a curve sampled on a uniform grid (the usual success AUC)."""
    return float(np.mean(values))


# -- tracking ------------------------------------------------------------------

@dataclass
class TrackerConfig:
    window_multiple: float = 4.0
    absence_threshold: float = 0.1
    augmentations: int = 500
    settle: int = 3
    steps_per_frame: int = 1
    level_weights: tuple = None
    seed: int = 0
    ridge: float = 1e-3


@dataclass
class TrackerState:
    model: object
    regressors: list
    config: TrackerConfig
    center: tuple
    size: float
    frame_shape: tuple
    reference: np.ndarray
    fused: np.ndarray = None
    last_box: BoundingBox = None
    history: list = field(default_factory=list)


def clamp_window(center, size, frame_shape):
    """Square window ``(x0, y0, side)`` of the requested size, kept inside the frame."""
    h, w = frame_shape[:2]
    side = float(min(size, w, h))
    x0 = min(max(center[0] - side / 2.0, 0.0), w - side)
    y0 = min(max(center[1] - side / 2.0, 0.0), h - side)
    return x0, y0, side


def crop_window(frame, window, field_size):
    x0, y0, side = window
    xi, yi, si = int(round(x0)), int(round(y0)), max(1, int(round(side)))
    crop = np.asarray(frame)[yi:yi + si, xi:xi + si]
    return resize_frame(np.ascontiguousarray(crop), field_size)


def _window_px(window):
    x0, y0, side = window
    return int(round(x0)), int(round(y0)), max(1, int(round(side)))


def to_field(box, window, field_size):
    xi, yi, si = _window_px(window)
    k = field_size / si
    x, y, w, h = box
    return ((x - xi) * k, (y - yi) * k, w * k, h * k)


def to_source(box, window, field_size):
    xi, yi, si = _window_px(window)
    k = si / field_size
    x, y, w, h = box
    return (xi + x * k, yi + y * k, w * k, h * k)


def fuse_heatmaps(maps, weights=None):
    """Weighted pixelwise mean of per-level min-max normalized maps."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if weights is None:
        weights = np.ones(len(maps))
    weights = np.asarray(weights, dtype=np.float64)
    fused = np.zeros_like(maps[0])
    for m, wt in zip(maps, weights):
        lo, hi = m.min(), m.max()
        if hi > lo:
            fused += wt * (m - lo) / (hi - lo)
    return fused / weights.sum()


def extract_box(fused):
    """Bounding rectangle of the largest connected region at or above half max.

    Returns ``None`` when the map has no positive peak.
    """
    peak = fused.max()
    if not np.isfinite(peak) or peak <= 0:
        return None
    labels, n = ndimage.label(fused >= 0.5 * peak)
    if n == 0:
        return None
    sizes = ndimage.sum_labels(np.ones_like(fused), labels, index=np.arange(1, n + 1))
    best = int(np.argmax(sizes)) + 1
    ys, xs = np.nonzero(labels == best)
    return (float(xs.min()), float(ys.min()),
            float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))


def presence_score(maps, reference, weights=None):
    """Weighted mean over levels of each map's peak relative to its priming peak."""
    if weights is None:
        weights = np.ones(len(maps))
    weights = np.asarray(weights, dtype=np.float64)
    rel = []
    for m, ref in zip(maps, reference):
        rel.append(max(float(np.max(m)), 0.0) / ref if ref > 0 else 0.0)
    return float(np.dot(weights, rel) / weights.sum())


def prime(model, frame, box, config=None):
    """Train heatmap readouts on the first frame and open the tracking window."""
    config = config or TrackerConfig()
    x, y, w, h = box
    if not (w > 0 and h > 0):
        raise ReadoutError(f"degenerate priming box {box}")
    frame = np.asarray(frame)
    F = model.spec.field_size
    center = (x + w / 2.0, y + h / 2.0)
    size = config.window_multiple * max(w, h)
    window = clamp_window(center, size, frame.shape)
    view = crop_window(frame, window, F)
    regs = train_heatmap(model, view, to_field(box, window, F), config.augmentations,
                         seed=config.seed, settle=config.settle, ridge=config.ridge)
    # reference response: the untransformed priming view
    present(model, view, config.settle)
    maps = emit_heatmap(regs, model)
    reference = np.array([max(float(np.max(m)), 0.0) for m in maps])
    state = TrackerState(model, regs, config, center, window[2], frame.shape, reference)
    state.fused = fuse_heatmaps(maps, config.level_weights)
    state.last_box = BoundingBox(*box)
    return state


def track_step(state, frame):
    """Advance one frame; returns the new box (``present=False`` when lost)."""
    cfg = state.config
    F = state.model.spec.field_size
    frame = np.asarray(frame)
    window = clamp_window(state.center, state.size, frame.shape)
    view = crop_window(frame, window, F)
    inputs = [view] * state.model.spec.frames_per_input if state.model.spec.frames_per_input > 1 else view
    for _ in range(cfg.steps_per_frame):
        step(state.model, inputs, learn=False)
    maps = emit_heatmap(state.regressors, state.model)
    state.fused = fuse_heatmaps(maps, cfg.level_weights)
    box = None
    if presence_score(maps, state.reference, cfg.level_weights) >= cfg.absence_threshold:
        box = extract_box(state.fused)
    if box is None:
        result = BoundingBox.absent()
    else:
        result = BoundingBox(*to_source(box, window, F))
        state.center = result.center
    state.last_box = result
    state.history.append(result)
    return result


def run_tracker(model, frames, first_box, config=None):
    """Prime on ``frames[0]`` and track the rest; returns an ``(n, 4)`` box array
    whose first row is the priming box."""
    frames = iter(frames)
    first = next(frames)
    state = prime(model, first, first_box, config)
    rows = [np.asarray(first_box, dtype=np.float64)]
    for frame in frames:
        rows.append(track_step(state, frame).as_row())
    return np.asarray(rows)


# -- outputs -------------------------------------------------------------------

def write_boxes(path, boxes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "w", "h", "present"])
        for i, row in enumerate(np.asarray(boxes)):
            present = not np.any(np.isnan(row))
            vals = [f"{v:.3f}" for v in row] if present else ["", "", "", ""]
            w.writerow([i, *vals, int(present)])


def metrics_dict(run, thresholds=None, scales=None):
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 101)
    if scales is None:
        scales = np.linspace(1.0, 4.0, 31)
    S = success_curve(run, thresholds)
    A = accuracy_curve(run, scales)
    return {
        "success": [[float(t), float(v)] for t, v in zip(thresholds, S)],
        "accuracy": [[float(s), float(v)] for s, v in zip(scales, A)],
        "success_auc": area_under(S),
        "frames_scored": len(run.predicted) - 1,
    }


def write_metrics(path, metrics):
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2)


def plot_curves(metrics, prefix):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for key, xlabel, ylabel in (("success", "overlap threshold", "success rate"),
                                ("accuracy", "ground-truth box scale", "accuracy")):
        xy = np.asarray(metrics[key])
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(xy[:, 0], xy[:, 1])
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(0, 1.02)
        fig.tight_layout()
        path = f"{prefix}_{key}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
