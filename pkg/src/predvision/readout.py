"""Supervised readouts on a frozen hierarchy: tile classifiers and heatmap regressors.

Classifiers pool the per-tile activations of one layer (every tile is an
example for the same shared weights). Heatmap regressors map all Complex
cells of one level to a field-sized image that is high where the target is.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import checkpoint as ckpt
from .hierarchy import step

SETTLE_STEPS = 3


class ReadoutError(ValueError):
    pass


# -- layer selection -----------------------------------------------------------

def parse_layer(selector, n_levels):
    """``"V2C"`` -> ``(2, "complex")``; tuples ``(level, kind)`` pass through."""
    if isinstance(selector, tuple):
        level, kind = selector
    else:
        m = re.fullmatch(r"[VvLl]?(\d+)\s*([SsCc])", str(selector).strip())
        if not m:
            raise ReadoutError(f"bad layer selector {selector!r}; expected e.g. V1S or V2C")
        level = int(m.group(1))
        kind = "simple" if m.group(2).upper() == "S" else "complex"
    if kind not in ("simple", "complex"):
        raise ReadoutError(f"layer kind must be simple or complex, got {kind!r}")
    if not 1 <= level <= n_levels:
        raise ReadoutError(f"level {level} out of range 1..{n_levels}")
    return level, kind


def layer_names(n_levels):
    return [f"V{i}{k}" for i in range(1, n_levels + 1) for k in ("S", "C")]


def layer_activations(model, level, kind):
    """Current per-tile activations of one layer (tiles x dim).

    Simple layers report the K normalized sparse responses; Complex layers
    report all J cells.
    """
    lvl = model.levels[level - 1]
    if kind == "simple":
        return lvl.simple[:, : lvl.spec.K].copy()
    return lvl.output.copy()


def present(model, image, settle=SETTLE_STEPS):
    """Show a static image to a freshly reset, frozen model for ``settle`` steps."""
    model.reset_state()
    window = [image] * model.spec.frames_per_input if model.spec.frames_per_input > 1 else image
    for _ in range(settle):
        step(model, window, learn=False)


@dataclass
class LabeledActivationSet:
    X: np.ndarray
    y: np.ndarray
    layer: str = ""
    tiles: int = 1

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ReadoutError("activations and labels differ in length")
        if np.any(self.y < 0):
            raise ReadoutError("labels must be non-negative")

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if len(self.y) else 0


def collect_activations(model, images, labels, layer, settle=SETTLE_STEPS):
    """One example per tile per image for the selected layer."""
    level, kind = parse_layer(layer, len(model.levels))
    labels = np.asarray(labels)
    if len(labels) != len(images):
        raise ReadoutError("need one label per image")
    n_tiles = model.levels[level - 1].spec.n_tiles
    X, y = [], []
    for image, label in zip(images, labels):
        present(model, image, settle)
        X.append(layer_activations(model, level, kind))
        y.append(np.full(n_tiles, label))
    dim = model.levels[level - 1].spec.K + (kind == "complex")
    X = np.concatenate(X) if X else np.zeros((0, dim))
    y = np.concatenate(y) if y else np.zeros(0, dtype=np.int64)
    name = f"V{level}{'S' if kind == 'simple' else 'C'}"
    return LabeledActivationSet(X, y, name, n_tiles)


def collect_all_layers(model, images, labels, settle=SETTLE_STEPS):
    """Activation sets for every layer from a single pass over ``images``."""
    n_levels = len(model.levels)
    store = {name: ([], []) for name in layer_names(n_levels)}
    for image, label in zip(images, labels):
        present(model, image, settle)
        for level in range(1, n_levels + 1):
            n_tiles = model.levels[level - 1].spec.n_tiles
            for kind, suffix in (("simple", "S"), ("complex", "C")):
                X, y = store[f"V{level}{suffix}"]
                X.append(layer_activations(model, level, kind))
                y.append(np.full(n_tiles, label))
    return {name: LabeledActivationSet(np.concatenate(X), np.concatenate(y), name,
                                       model.levels[int(name[1:-1]) - 1].spec.n_tiles)
            for name, (X, y) in store.items()}


# -- classifier ----------------------------------------------------------------

@dataclass
class PerceptronClassifier:
    """One-vs-all tanh perceptron over standardized features.

    Scores are ``tanh(((x - mean) / scale) @ W + bias)``.
    """

    W: np.ndarray
    bias: np.ndarray
    mean: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[1] < 2:
            raise ReadoutError("classifier needs at least 2 classes")
        dim = self.W.shape[0]
        if self.mean is None:
            self.mean = np.zeros(dim)
        if self.scale is None:
            self.scale = np.ones(dim)

    @classmethod
    def random(cls, dim, n_classes, rng, mean=None, scale=None):
        W = rng.normal(0.0, 1.0 / np.sqrt(max(dim, 1)), size=(dim, n_classes))
        return cls(W, np.zeros(n_classes), mean, scale)

    @property
    def dim(self):
        return self.W.shape[0]

    @property
    def n_classes(self):
        return self.W.shape[1]

    def standardize(self, X):
        return (X - self.mean) / self.scale

    def preactivation(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ReadoutError(f"activation has dim {X.shape[-1]}, classifier expects {self.dim}")
        return self.standardize(X) @ self.W + self.bias

    def scores(self, X):
        return np.tanh(self.preactivation(X))

    def predict(self, X):
        return np.argmax(self.scores(X), axis=-1)


def feature_stats(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return mean, scale


def train_classifier(data, epochs=20, rate=0.01, batch_size=16, seed=0, n_classes=None):
    """SGD on the squared error between tanh scores and +-1 one-vs-all targets."""
    k = n_classes or data.n_classes
    present_classes = np.unique(data.y)
    if len(present_classes) < 2:
        raise ReadoutError("training data must contain at least 2 classes")
    rng = np.random.default_rng(seed)
    mean, scale = feature_stats(data.X)
    clf = PerceptronClassifier.random(data.X.shape[1], k, rng, mean, scale)
    Xs = clf.standardize(data.X)
    T = -np.ones((len(data.y), k))
    T[np.arange(len(data.y)), data.y] = 1.0
    for _ in range(epochs):
        order = rng.permutation(len(Xs))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xb = Xs[idx]
            out = np.tanh(xb @ clf.W + clf.bias)
            # d/dpre of mean squared error, averaged over the batch
            g = 2.0 * (out - T[idx]) * (1.0 - out * out) / len(idx)
            clf.W -= rate * xb.T @ g
            clf.bias -= rate * g.sum(axis=0)
    return clf


def untrained_classifier(data, seed=0, n_classes=None):
    k = n_classes or data.n_classes
    mean, scale = feature_stats(data.X)
    return PerceptronClassifier.random(data.X.shape[1], k, np.random.default_rng(seed), mean, scale)


def classify(clf, activation):
    """Scores and argmax label (ties go to the lowest class index)."""
    scores = clf.scores(activation)
    return scores, np.argmax(scores, axis=-1)


def accuracy(clf, data):
    if len(data.y) == 0:
        return float("nan")
    return float(np.mean(clf.predict(data.X) == data.y))


def write_report(path, rows):
    """Rows of ``(layer, accuracy, n_examples)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "accuracy", "n_examples"])
        for layer, acc, n in rows:
            w.writerow([layer, f"{acc:.6f}", n])


# -- heatmaps ------------------------------------------------------------------

@dataclass
class HeatmapRegressor:
    """Linear map from a level's Complex cells to a ``field x field`` image."""

    W: np.ndarray
    bias: np.ndarray
    field_size: int
    level: int

    def __call__(self, x):
        out = np.asarray(x, dtype=np.float64).ravel() @ self.W + self.bias
        return out.reshape(self.field_size, self.field_size)


def heatmap_features(model, level):
    """All Complex cells of a level, K per tile (the constant partner dropped)."""
    lvl = model.levels[level - 1]
    return lvl.output[:, : lvl.spec.K].ravel()


def box_mask(box, size, clip=False):
    """1 where a pixel center lies inside ``(x, y, w, h)``, 0 elsewhere.

    Degenerate boxes raise unless ``clip`` is set (augmented boxes may leave
    the field entirely).
    """
    x, y, w, h = box
    if (w <= 0 or h <= 0) and not clip:
        raise ReadoutError(f"degenerate box {box}")
    c = np.arange(size) + 0.5
    inside_x = (c >= x) & (c <= x + w)
    inside_y = (c >= y) & (c <= y + h)
    return (inside_y[:, None] & inside_x[None, :]).astype(np.float64)


def augment_view(image, box, scale, shift):
    """Scale ``image`` by ``scale`` about the box center, then translate by ``shift``.

    Returns the transformed uint8 image and the transformed box.
    """
    x, y, w, h = box
    cx, cy = x + w / 2.0, y + h / 2.0
    dx, dy = shift
    # output pixel center p maps to input point c + (p - c - shift) / scale;
    # array index i has its center at i + 0.5
    matrix = np.diag([1.0 / scale, 1.0 / scale])
    offset = np.array([cy - 0.5 + (0.5 - cy - dy) / scale,
                       cx - 0.5 + (0.5 - cx - dx) / scale])
    img = np.asarray(image, dtype=np.float64)
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.affine_transform(img[..., ch], matrix, offset=offset,
                                                order=1, mode="nearest")
    new_box = (cx + dx - w * scale / 2.0, cy + dy - h * scale / 2.0, w * scale, h * scale)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8), new_box


def augmentation_plan(n, field_size, rng, max_shift=0.25, scale_range=(0.5, 2.0)):
    """``n`` (scale, shift) pairs; the first view is always the identity."""
    plan = [(1.0, (0.0, 0.0))]
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    for _ in range(n - 1):
        sc = float(np.exp(rng.uniform(lo, hi)))
        shift = tuple(rng.uniform(-max_shift, max_shift, size=2) * field_size)
        plan.append((sc, shift))
    return plan


def fit_ridge(X, Y, ridge=1e-3):
    """Least squares with a small ridge, solved in whichever space is smaller.

    The ridge is relative to the mean feature energy so it is scale free.
    """
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    n, d = Xc.shape
    energy = float(np.mean(Xc * Xc)) * d
    alpha = ridge * max(energy, 1e-12)
    if n <= d:
        G = Xc @ Xc.T
        G[np.diag_indices_from(G)] += alpha
        W = Xc.T @ np.linalg.solve(G, Yc)
    else:
        G = Xc.T @ Xc
        G[np.diag_indices_from(G)] += alpha
        W = np.linalg.solve(G, Xc.T @ Yc)
    return W, my - mx @ W


def train_heatmap(model, frame, box, augmentations=500, seed=0, settle=SETTLE_STEPS,
                  ridge=1e-3, max_shift=0.25, scale_range=(0.5, 2.0)):
    """Per-level regressors trained on augmented copies of the priming frame.

    ``frame`` is a field-sized uint8 image and ``box`` is ``(x, y, w, h)`` in
    its pixel coordinates. Hierarchy weights are never modified.
    """
    F = model.spec.field_size
    frame = np.asarray(frame)
    if frame.shape[:2] != (F, F):
        raise ReadoutError(f"priming frame must be {F}x{F}")
    box_mask(box, F)  # validates the box
    if augmentations < 1:
        raise ReadoutError("need at least one augmented view")
    rng = np.random.default_rng(seed)
    feats = [[] for _ in model.levels]
    targets = []
    for scale, shift in augmentation_plan(augmentations, F, rng, max_shift, scale_range):
        view, vbox = augment_view(frame, box, scale, shift)
        present(model, view, settle)
        for li in range(len(model.levels)):
            feats[li].append(heatmap_features(model, li + 1))
        targets.append(box_mask(vbox, F, clip=True).ravel())
    Y = np.asarray(targets)
    regs = []
    for li in range(len(model.levels)):
        W, b = fit_ridge(np.asarray(feats[li]), Y, ridge)
        regs.append(HeatmapRegressor(W, b, F, li + 1))
    return regs


def emit_heatmap(regressors, model):
    """One signed field-sized heatmap per level from the model's current state."""
    return [reg(heatmap_features(model, reg.level)) for reg in regressors]


# -- persistence ---------------------------------------------------------------

def classifier_chunks(clf, prefix="clf"):
    return {
        prefix: ckpt.encode_json({"dim": clf.dim, "n_classes": clf.n_classes}),
        prefix + "/W": ckpt.encode_array(clf.W),
        prefix + "/bias": ckpt.encode_array(clf.bias),
        prefix + "/mean": ckpt.encode_array(clf.mean),
        prefix + "/scale": ckpt.encode_array(clf.scale),
    }


def classifier_from_chunks(chunks, prefix="clf"):
    arr = {k: ckpt.decode_array(chunks[f"{prefix}/{k}"]) for k in ("W", "bias", "mean", "scale")}
    return PerceptronClassifier(**arr)


def heatmap_chunks(regressors, prefix="heatmap"):
    chunks = {prefix: ckpt.encode_json({"levels": [r.level for r in regressors],
                                        "field_size": regressors[0].field_size})}
    for r in regressors:
        chunks[f"{prefix}/L{r.level}/W"] = ckpt.encode_array(r.W)
        chunks[f"{prefix}/L{r.level}/bias"] = ckpt.encode_array(r.bias)
    return chunks


def heatmaps_from_chunks(chunks, prefix="heatmap"):
    meta = ckpt.decode_json(chunks[prefix])
    return [HeatmapRegressor(ckpt.decode_array(chunks[f"{prefix}/L{lv}/W"]),
                             ckpt.decode_array(chunks[f"{prefix}/L{lv}/bias"]),
                             meta["field_size"], lv)
            for lv in meta["levels"]]


def save_readouts(path, classifiers=None, regressors=None):
    chunks = {}
    for name, clf in (classifiers or {}).items():
        chunks.update(classifier_chunks(clf, f"clf/{name}"))
    if regressors:
        chunks.update(heatmap_chunks(regressors))
    ckpt.write_container(path, chunks)


def load_readouts(path):
    chunks = ckpt.read_container(path)
    names = {k.split("/")[1] for k in chunks if k.startswith("clf/")}
    classifiers = {n: classifier_from_chunks(chunks, f"clf/{n}") for n in sorted(names)}
    regressors = heatmaps_from_chunks(chunks) if "heatmap" in chunks else None
    return classifiers, regressors
