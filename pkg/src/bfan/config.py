"""Model and run configuration.

A :class:`RunConfig` is stored as flat ``key = value`` text, one key per line,
``#`` comments allowed. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from enum import Enum

from .errors import ConfigError


class Ablation(str, Enum):
    BASELINE = "Baseline"
    BOUNDARY_MINUS = "BoundaryMinus"
    BOUNDARY_PLUS = "BoundaryPlus"
    AFFM_PLUS = "AffmPlus"

    @property
    def uses_boundary(self) -> bool:
        return self is not Ablation.BASELINE

    @property
    def uses_rcu(self) -> bool:
        return self is not Ablation.BOUNDARY_MINUS


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (64, 64)
    base_channels: int = 16
    levels_saliency: int = 4
    scales: int = 5
    boundary_channels: int = 16
    agg_channels: int = 32
    rcu_count: int = 1
    ablation: Ablation = Ablation.AFFM_PLUS
    fpm_subset: tuple[int, ...] = (1, 2, 3, 4, 5)
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ablation", Ablation(self.ablation))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "fpm_subset", tuple(sorted(set(int(v) for v in self.fpm_subset))))
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ConfigError(f"input_size {self.input_size} must be positive multiples of 32")
        if self.levels_saliency != 4 or self.scales != 5:
            raise ConfigError("the network is defined for 4 saliency levels and 5 scales")
        if not self.fpm_subset:
            raise ConfigError("fpm_subset must be non-empty")
        if not set(self.fpm_subset) <= {1, 2, 3, 4, 5}:
            raise ConfigError(f"fpm_subset {self.fpm_subset} outside 1..5")
        for name in ("base_channels", "boundary_channels", "agg_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.rcu_count < 0:
            raise ConfigError("rcu_count must be >= 0")

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    epochs: int = 50
    lr_step: int = 10
    lr_decay: float = 0.9
    boundary_weight: float = 1.0
    supervise_stages: bool = True
    pos_weight: float = 1.0
    checkpoint_every: int = 0
    plateau_stop: bool = False
    mean_bgr: tuple[float, float, float] = (104.0, 116.7, 122.7)
    input_scale: float = 1.0

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_text(self) -> str:
        lines = []
        for part in (self.model, self.train):
            for f in fields(part):
                lines.append(f"{f.name} = {_format(getattr(part, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = val
        return cls().with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        """Apply string-valued overrides; unknown keys raise :class:`ConfigError`."""
        model_kw, train_kw = {}, {}
        mfields = {f.name: f for f in fields(ModelConfig)}
        tfields = {f.name: f for f in fields(TrainConfig)}
        for key, val in values.items():
            if key in mfields:
                model_kw[key] = _parse(key, val, getattr(self.model, key))
            elif key in tfields:
                train_kw[key] = _parse(key, val, getattr(self.train, key))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return RunConfig(self.model.replace(**model_kw), self.train.replace(**train_kw))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def model_hash(cfg: ModelConfig) -> str:
    """SHA-256 over the canonical text form of the architecture config."""
    text = "\n".join(f"{f.name}={_format(getattr(cfg, f.name))}" for f in fields(cfg))
    return hashlib.sha256(text.encode()).hexdigest()


def _format(v) -> str:
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key: str, text: str, like):
    try:
        if isinstance(like, Enum):
            return type(like)(text)
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(like, tuple):
            elem = type(like[0]) if like else int
            return tuple(elem(x.strip()) for x in text.replace("x", ",").split(",") if x.strip())
        return type(like)(text)
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None
