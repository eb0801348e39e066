"""Synthetic stimuli: drifting gratings, sprite classification sets, moving targets."""
from __future__ import annotations

import numpy as np

from .ingest import GRAY


def grating(size, orientation, period, phase, contrast=1.0, color=(1.0, 1.0, 1.0)):
    """Static sinusoidal grating, uint8 ``(size, size, 3)``.

    ``orientation`` is the direction of the wave vector in radians.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = xx * np.cos(orientation) + yy * np.sin(orientation)
    wave = np.sin(2.0 * np.pi * u / period + phase)
    img = GRAY + 127.5 * contrast * wave[..., None] * np.asarray(color)[None, None, :]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def drifting_gratings(size, n_frames, seed=0, **kwargs):
    """Video of sinusoidal gratings drifting at constant velocity per segment.

    Each segment draws a direction, spatial period, phase speed (radians per
    frame) and contrast; phase advances deterministically within a segment.
    Returns a list of uint8 frames.
    """
    return list(DriftingGratingStream(size, n_frames, seed, **kwargs))


class DriftingGratingStream:
    """Re-iterable, lazily generated drifting-grating video."""

    def __init__(self, size, n_frames, seed=0, **kwargs):
        self.size, self.n_frames, self.seed, self.kwargs = size, n_frames, seed, kwargs

    def __len__(self):
        return self.n_frames

    def __iter__(self):
        rng = np.random.default_rng(self.seed)
        seg = self.kwargs.get("segment", (60, 240))
        period = self.kwargs.get("period", (3.0, 12.0))
        speed = self.kwargs.get("speed", (0.25, 0.9))
        contrast = self.kwargs.get("contrast", (0.5, 1.0))
        emitted = 0
        while emitted < self.n_frames:
            length = int(rng.integers(seg[0], seg[1] + 1))
            theta = rng.uniform(0.0, 2.0 * np.pi)
            per = rng.uniform(*period)
            omega = rng.uniform(*speed)
            amp = rng.uniform(*contrast)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            for k in range(min(length, self.n_frames - emitted)):
                yield grating(self.size, theta, per, phase - omega * k, amp)
                emitted += 1


# -- sprites -------------------------------------------------------------------

_SHAPES = ("square", "disk", "triangle", "cross", "bar", "ring", "diamond")
_COLORS = (
    (255, 40, 40), (40, 220, 40), (60, 90, 255), (250, 230, 40), (240, 60, 240),
    (40, 230, 230), (255, 150, 30), (240, 240, 240),
)


def _shape_mask(shape, n):
    yy, xx = (np.mgrid[0:n, 0:n] + 0.5) / n * 2.0 - 1.0
    if shape == "square":
        return (np.abs(xx) < 0.8) & (np.abs(yy) < 0.8)
    if shape == "disk":
        return xx ** 2 + yy ** 2 < 0.8
    if shape == "triangle":
        return (yy > -0.8) & (yy < 0.8) & (np.abs(xx) < (yy + 0.8) / 2.0)
    if shape == "cross":
        return (np.abs(xx) < 0.3) | (np.abs(yy) < 0.3)
    if shape == "bar":
        return np.abs(yy) < 0.35
    if shape == "ring":
        r2 = xx ** 2 + yy ** 2
        return (r2 < 0.9) & (r2 > 0.35)
    if shape == "diamond":
        return np.abs(xx) + np.abs(yy) < 0.9
    raise ValueError(shape)


def sprite_classes(k):
    """The first ``k`` distinct (shape, color) combinations.

    Shape and color cycle together; their counts are coprime, so every
    combination appears once and neighbouring classes differ in both.
    """
    n = len(_SHAPES) * len(_COLORS)
    if k > n:
        raise ValueError(f"at most {n} sprite classes")
    return [(_SHAPES[i % len(_SHAPES)], _COLORS[i % len(_COLORS)]) for i in range(k)]


def render_sprite(size, shape, color, scale, cx, cy):
    """Sprite on a black background; ``scale`` is its side as a fraction of ``size``."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    n = max(2, int(round(scale * size)))
    mask = _shape_mask(shape, n)
    x0, y0 = int(round(cx - n / 2)), int(round(cy - n / 2))
    ys, xs = np.nonzero(mask)
    ys, xs = ys + y0, xs + x0
    keep = (ys >= 0) & (ys < size) & (xs >= 0) & (xs < size)
    img[ys[keep], xs[keep]] = color
    return img


def sprite_dataset(size, n_per_class, k=41, seed=0, scale=(0.35, 0.9)):
    """Randomly positioned and scaled sprites; returns ``(images, labels)``."""
    rng = np.random.default_rng(seed)
    classes = sprite_classes(k)
    images, labels = [], []
    for _ in range(n_per_class):
        for label, (shape, color) in enumerate(classes):
            sc = rng.uniform(*scale)
            half = sc * size / 2.0
            cx = rng.uniform(half * 0.5, size - half * 0.5)
            cy = rng.uniform(half * 0.5, size - half * 0.5)
            images.append(render_sprite(size, shape, color, sc, cx, cy))
            labels.append(label)
    order = rng.permutation(len(labels))
    return [images[i] for i in order], np.asarray(labels)[order]


def sprite_video(size, n_frames, k=41, seed=0, speed=0.5, segment=(30, 120),
                 scale=(0.35, 0.9)):
    """Sprites gliding across the field, wrapping at the edges.

    Each segment draws a class, size, start and velocity (pixels per
    frame, each axis uniform in ``[-speed, speed]``). Returns uint8 frames.
    """
    rng = np.random.default_rng(seed)
    classes = sprite_classes(k)
    frames = []
    while len(frames) < n_frames:
        shape, color = classes[rng.integers(k)]
        sc = rng.uniform(*scale)
        x, y = rng.uniform(0, size, 2)
        vx, vy = rng.uniform(-speed, speed, 2)
        for _ in range(int(rng.integers(segment[0], segment[1] + 1))):
            frames.append(render_sprite(size, shape, color, sc, x, y))
            x, y = (x + vx) % size, (y + vy) % size
    return frames[:n_frames]


def solid_color_dataset(size, n_per_class, colors=((255, 0, 0), (0, 0, 255)), seed=0,
                        jitter=20):
    """Whole-field color stimuli with intensity jitter; trivially separable."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(n_per_class):
        for label, color in enumerate(colors):
            noise = rng.integers(-jitter, jitter + 1, size=(size, size, 3))
            img = np.clip(np.asarray(color)[None, None, :] + noise, 0, 255)
            images.append(img.astype(np.uint8))
            labels.append(label)
    return images, np.asarray(labels)


def moving_square_video(width, height, n_frames, side=16, speed=(1.5, 1.0),
                        color=(255, 255, 255), background=0, start=None, seed=0):
    """A bright square bouncing inside the frame; returns ``(frames, boxes)``.

    Boxes are ``x, y, w, h`` rows in pixel coordinates.
    """
    rng = np.random.default_rng(seed)
    if start is None:
        start = (rng.uniform(0, width - side), rng.uniform(0, height - side))
    x, y = float(start[0]), float(start[1])
    vx, vy = speed
    frames, boxes = [], []
    for _ in range(n_frames):
        img = np.full((height, width, 3), background, dtype=np.uint8)
        xi, yi = int(round(x)), int(round(y))
        img[yi:yi + side, xi:xi + side] = color
        frames.append(img)
        boxes.append([xi, yi, side, side])
        x += vx
        y += vy
        if x < 0 or x > width - side:
            vx = -vx
            x = min(max(x, 0), width - side)
        if y < 0 or y > height - side:
            vy = -vy
            y = min(max(y, 0), height - side)
    return frames, np.asarray(boxes, dtype=np.float64)
