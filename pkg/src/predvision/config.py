"""Run configuration: one flat ``section.key = value`` file plus command-line overrides.

The file grammar is a subset of TOML (dotted keys, numbers, booleans,
quoted strings, arrays of numbers), so it is read with a TOML parser.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .hierarchy import HierarchySpec
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelOptions:
    field_size: int = 80
    tile_size: int = 10
    K: int = 400
    N: int = 70
    T: int = 25
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


@dataclass
class TrainOptions:
    passes: int = 1
    log_every: int = 1000
    stride: int = 1


@dataclass
class ClassifyOptions:
    classes: int = 41
    per_class: int = 20
    test_per_class: int = 10
    epochs: int = 20
    rate: float = 0.01
    settle: int = 3
    scale_min: float = 0.35
    scale_max: float = 0.9


@dataclass
class TrackOptions:
    window_multiple: float = 4.0
    absence_threshold: float = 0.1
    augmentations: int = 500
    settle: int = 3
    steps_per_frame: int = 1
    level_weights: list = field(default_factory=list)
    ridge: float = 1e-3


@dataclass
class AnalysisOptions:
    stc_frames: int = 500_000
    stride: int = 100
    top: int = 9
    basis_dim: int = 1000
    max_iter: int = 2000
    probe_frames: int = 1000
    top_n: int = 16


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    model: ModelOptions = field(default_factory=ModelOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    classify: ClassifyOptions = field(default_factory=ClassifyOptions)
    track: TrackOptions = field(default_factory=TrackOptions)
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)

    def hierarchy_spec(self):
        m = dataclasses.asdict(self.model)
        geometry = {k: m.pop(k) for k in ("field_size", "tile_size", "K", "N", "T",
                                          "frames_per_input")}
        return HierarchySpec.default(**geometry, **m)

    def tracker_config(self):
        t = self.track
        return TrackerConfig(t.window_multiple, t.absence_threshold, t.augmentations, t.settle,
                             t.steps_per_frame, tuple(t.level_weights) or None, self.seed,
                             t.ridge)

    # -- flat key access ---------------------------------------------------
    def items(self):
        """``(dotted_key, value)`` pairs in declaration order."""
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for g in dataclasses.fields(value):
                    out.append((f"{f.name}.{g.name}", getattr(value, g.name)))
            else:
                out.append((f.name, value))
        return out

    def set(self, key, value):
        """Assign one dotted key, coercing to the declared field type."""
        parts = key.split(".")
        target = self
        for part in parts[:-1]:
            if not hasattr(target, part) or not dataclasses.is_dataclass(getattr(target, part)):
                raise ConfigError(f"unknown config section {part!r} in {key!r}")
            target = getattr(target, part)
        name = parts[-1]
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields or dataclasses.is_dataclass(getattr(target, name)):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, name, _coerce(getattr(target, name), value, key))

    def update(self, mapping, prefix=""):
        for k, v in mapping.items():
            full = f"{prefix}{k}"
            if isinstance(v, dict):
                self.update(v, full + ".")
            else:
                self.set(full, v)
        return self


def _coerce(current, value, key):
    if isinstance(value, str) and not isinstance(current, str):
        value = _parse_scalar(value, key)
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(current, list):
            return [float(v) for v in (value if isinstance(value, list) else [value])]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc


def _parse_scalar(text, key):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load_config(path=None, overrides=()):
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg.update(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    return cfg


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(repr(float(v)) for v in value) + "]"
    return json.dumps(value)


def dump_config(cfg, path=None):
    text = "".join(f"{k} = {_format(v)}\n" for k, v in cfg.items())
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
