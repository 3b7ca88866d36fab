"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from rccf.errors import ConfigError


@dataclass
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    stride: int = 4
    channels: int = 32
    backbone_widths: tuple = (32, 48, 64)
    stem_width: int = 0
    embed_dim: int = 64
    lang_dim: int = 32
    encoder_mode: str = "birnn"
    head_hidden: int = 16
    heatmap_prior: float = 0.1
    activation: str = "relu"
    fusion: str = "average"
    kernel_size: int = 1
    kernel_mode: str = "per-level"
    feature_levels: int = 3
    regression_input: str = "visual"
    size_units: str = "map"
    min_overlap: float = 0.7
    learning_rate: float = 5e-4
    lr_decay: float = 0.1
    decay_fractions: tuple = (0.75, 0.875)
    steps: int = 2000
    batch_size: int = 16
    size_weight: float = 0.1
    off_weight: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    shift_fraction: float = 0.1
    scale_range: tuple = (0.9, 1.1)
    eval_every: int = 500
    log_every: int = 10
    notes: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("image_size", "stride", "channels", "embed_dim", "lang_dim",
                    "head_hidden", "steps", "batch_size", "learning_rate", "eval_every", "log_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.stem_width < 0:
            raise ConfigError(f"stem_width must be 0 (off) or positive, got {self.stem_width}")
        choices = {
            "encoder_mode": ("birnn", "bow"),
            "activation": ("relu", "softplus"),
            "fusion": ("average", "max", "concat"),
            "kernel_mode": ("per-level", "single"),
            "regression_input": ("visual", "language"),
            "size_units": ("map", "pixel"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.kernel_size not in (1, 3):
            raise ConfigError(f"kernel_size must be 1 or 3, got {self.kernel_size}")
        if self.feature_levels not in (1, 3):
            raise ConfigError(f"feature_levels must be 1 or 3, got {self.feature_levels}")
        if self.feature_levels == 1 and self.kernel_mode != "single":
            raise ConfigError("a single feature level uses a single kernel (kernel_mode=single)")
        if len(self.backbone_widths) != 3:
            raise ConfigError("backbone_widths needs three entries")
        if self.image_size % (8 * self.stride):
            raise ConfigError(f"image_size {self.image_size} not divisible by 8*stride")
        lo, hi = self.decay_fractions
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"decay_fractions must satisfy 0 < a <= b <= 1, got {lo}, {hi}")
        if not 0 < self.heatmap_prior < 1:
            raise ConfigError("heatmap_prior must be in (0, 1)")
        if not 0 < self.min_overlap < 1:
            raise ConfigError("min_overlap must be in (0, 1)")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        defaults = cls()
        known = {f.name: f for f in fields(cls)}
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {number}: expected key = value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"config line {number}: unknown key {key!r}")
            values[key] = _parse(value, getattr(defaults, key), key, number)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _parse(value: str, default, key: str, line: int):
    try:
        if isinstance(default, bool):
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(v.strip()) for v in value.split(",") if v.strip())
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"config line {line}: bad value {value!r} for {key}") from exc
