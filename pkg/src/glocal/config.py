"""Run configuration: nested dataclasses with strict YAML round-trip.

Unknown keys are rejected at load time; the effective (defaults-applied)
config is written next to every checkpoint so a run can be reproduced from
its artifacts alone. Values follow the source method's published defaults
where they exist (learning rate 1e-4, cosine schedule, AdamW-style
optimizer, loss weights 0.5/0.5/0.5/0.25); everything else is a documented
desk-scale choice.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

OUTPUT_DIR_ENV = "GLOCAL_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train_path: str = ""
    eval_path: str = ""
    eval_labels_path: str = ""
    grammar_path: str = ""
    class_names: list[str] = field(default_factory=list)
    input_size: int = 64


@dataclass
class ModelSection:
    d_enc: int = 64
    d_proj: int = 32
    d_ss: int = 32
    conv_channels: list[int] = field(default_factory=lambda: [8, 16])
    init_tau: float = 0.07


@dataclass
class LossSection:
    weights: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.5, 0.25])
    local_sentence_mean: bool = False


@dataclass
class TrainSection:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    schedule: str = "cosine"  # cosine | constant


@dataclass
class AugmentationSection:
    crop_scale: list[float] = field(default_factory=lambda: [0.875, 1.0])
    flip_probability: float = 0.0
    intensity_jitter: float = 0.1
    noise_sigma: float = 0.05


@dataclass
class InferenceSection:
    prompt_scheme: str = "detailed"  # basic | detailed
    fusion: str = "mean"  # local | global | max | cat | mean


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "float64"  # float64 | float32
    output_dir: str = ""
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)
    inference: InferenceSection = field(default_factory=InferenceSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if len(self.loss.weights) != 4 or any(w < 0 for w in self.loss.weights):
            raise ConfigError(f"loss.weights must be 4 non-negative values, got {self.loss.weights}")
        if self.train.schedule not in ("cosine", "constant"):
            raise ConfigError(f"train.schedule must be cosine or constant, got {self.train.schedule!r}")
        if self.train.batch_size < 1 or self.train.epochs < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.epochs >= 0")
        if self.train.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")
        if len(self.model.conv_channels) != 2:
            raise ConfigError("model.conv_channels must list exactly 2 stage widths")
        if self.inference.prompt_scheme not in ("basic", "detailed"):
            raise ConfigError(f"unknown prompt scheme {self.inference.prompt_scheme!r}")
        if self.inference.fusion not in ("local", "global", "max", "cat", "mean"):
            raise ConfigError(f"unknown fusion mode {self.inference.fusion!r}")
        if not 0 < self.model.init_tau:
            raise ConfigError("model.init_tau must be positive")

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            return Path(env)
        return Path("runs")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return cls(**_coerce(cls, raw, path="config"))

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        return cls.from_dict(raw)


def _coerce(dc_type, raw: dict, path: str) -> dict:
    """Map a raw dict onto dataclass fields, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(dc_type)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) or (isinstance(f.type, str) and f.type.endswith("Section")):
            section_type = _SECTION_TYPES[name]
            kwargs[name] = section_type(**_coerce(section_type, value, f"{path}.{name}"))
        else:
            kwargs[name] = value
    return kwargs


_SECTION_TYPES = {
    "data": DataSection,
    "model": ModelSection,
    "loss": LossSection,
    "train": TrainSection,
    "augmentation": AugmentationSection,
    "inference": InferenceSection,
}


def apply_overrides(config: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply dotted-key overrides (e.g. {"train.epochs": 5}) onto a config."""
    raw = config.to_dict()
    for key, value in overrides.items():
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            if p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(raw)
