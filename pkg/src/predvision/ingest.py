"""Frame loading, tiling and centering for the bottom level of the hierarchy."""
from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp")
GRAY = 127.5


class EmptyStreamError(ValueError):
    """No frames could be found at the given location."""


class FrameReadError(OSError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    field_size: int = 80
    tile_size: int = 10
    frames_per_input: int = 1
    repeat_count: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.field_size % self.tile_size:
            raise ValueError(
                f"field_size {self.field_size} not divisible by tile_size {self.tile_size}")
        if self.frames_per_input < 1:
            raise ValueError("frames_per_input must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def grid(self):
        return self.field_size // self.tile_size

    @property
    def input_dim(self):
        return self.tile_size * self.tile_size * 3 * self.frames_per_input


def resize_frame(frame, size):
    """Bilinear resize to ``size x size``; frames already that size pass through."""
    frame = np.asarray(frame)
    if frame.shape[:2] == (size, size):
        return frame
    img = Image.fromarray(frame).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def _read_image(path):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FrameReadError(f"cannot read frame {path}: {exc}") from exc


def list_frame_files(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _raw_meta(path):
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        sidecar = Path(path).with_suffix(".json")
    if not sidecar.exists():
        raise FrameReadError(f"raw blob {path} has no sidecar .json with width/height")
    meta = json.loads(sidecar.read_text())
    return int(meta["width"]), int(meta["height"])


def read_raw_blob(path):
    """Planar RGB blob: per frame, all R bytes then G then B (row-major)."""
    width, height = _raw_meta(path)
    data = np.fromfile(path, dtype=np.uint8)
    per_frame = width * height * 3
    if data.size % per_frame:
        raise FrameReadError(f"{path}: size {data.size} is not a multiple of {per_frame}")
    planes = data.reshape(-1, 3, height, width)
    return np.ascontiguousarray(planes.transpose(0, 2, 3, 1))


def write_raw_blob(path, frames):
    frames = np.asarray(frames, dtype=np.uint8)
    n, h, w, _ = frames.shape
    frames.transpose(0, 3, 1, 2).tofile(path)
    Path(str(path) + ".json").write_text(json.dumps({"width": w, "height": h, "frames": n}))


def load_frame_sequence(path, config=StreamConfig(), resize=True):
    """Yield frames from a directory of images or a raw planar RGB blob.

    Frames come out in filename order, decimated by ``config.stride`` and
    resized to the visual field unless ``resize`` is False.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such frame source: {path}")
    if path.is_dir():
        files = list_frame_files(path)[::config.stride]
        if not files:
            raise EmptyStreamError(f"no image frames in {path}")

        def frames():
            for f in files:
                yield _read_image(f)
    else:
        blob = read_raw_blob(path)[::config.stride]
        if len(blob) == 0:
            raise EmptyStreamError(f"no frames in {path}")

        def frames():
            yield from blob

    for frame in frames():
        yield resize_frame(frame, config.field_size) if resize else frame


def load_frames(path, config=StreamConfig(), resize=True):
    return list(load_frame_sequence(path, config, resize))


def save_frames(directory, frames):
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(
            Path(directory) / f"{i:06d}.png")


def frame_windows(frames, k):
    """Sliding windows of ``k`` consecutive frames, advancing one frame per step."""
    buf = deque(maxlen=k)
    for frame in frames:
        buf.append(frame)
        if len(buf) == k:
            yield list(buf)


def tile_and_center(frame_window, config=StreamConfig()):
    """Cut each frame of the window into tiles and subtract mid-gray.

    Returns an array ``(grid, grid, m)``; a tile's vector is its pixels in
    row-major ``(y, x, channel)`` order, frames concatenated oldest first.
    """
    if isinstance(frame_window, np.ndarray) and frame_window.ndim == 3:
        frame_window = [frame_window]
    if len(frame_window) != config.frames_per_input:
        raise ValueError(
            f"window has {len(frame_window)} frames, expected {config.frames_per_input}")
    g, ts = config.grid, config.tile_size
    parts = []
    for frame in frame_window:
        frame = np.asarray(frame)
        if frame.shape != (config.field_size, config.field_size, 3):
            raise ValueError(f"frame shape {frame.shape} does not match the visual field")
        tiles = frame.reshape(g, ts, g, ts, 3).transpose(0, 2, 1, 3, 4)
        parts.append(tiles.reshape(g, g, ts * ts * 3))
    return np.concatenate(parts, axis=-1).astype(np.float64) - GRAY


def untile(vectors, config=StreamConfig()):
    """Inverse of ``tile_and_center`` for a single-frame window."""
    g, ts = config.grid, config.tile_size
    tiles = np.asarray(vectors)[..., : ts * ts * 3] + GRAY
    img = tiles.reshape(g, g, ts, ts, 3).transpose(0, 2, 1, 3, 4)
    return img.reshape(config.field_size, config.field_size, 3)


def read_groundtruth(path):
    """Parse ``x,y,w,h`` lines; ``NaN`` rows mark frames without the target."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.replace("\t", ",").replace(" ", ",").split(",")
        fields = [f for f in fields if f]
        if len(fields) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        rows.append([float(f) for f in fields])
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def write_groundtruth(path, boxes):
    lines = []
    for row in np.asarray(boxes, dtype=np.float64):
        if np.any(np.isnan(row)):
            lines.append("NaN,NaN,NaN,NaN")
        else:
            lines.append(",".join(str(int(round(v))) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
