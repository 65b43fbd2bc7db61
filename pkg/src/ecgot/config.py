"""Declarative pipeline configuration: one JSON file, strict keys, defaults."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument
from .model import ModelConfig, TrainConfig

DATA_ROOT_ENV = "ECGOT_DATA_ROOT"
STRATEGIES = ("none", "oversample", "ot")


@dataclass
class DspConfig:
    n_points: int = 5
    notch_f0_hz: float = 50.0
    notch_q: float = 30.0
    window_samples: int = 60
    downsample_to_hz: float = 50.0


@dataclass
class OtConfig:
    gamma_scale: float = 0.05
    batch_size: int = 64
    max_iter: int = 1000
    tol: float = 1e-6


@dataclass
class AugmentConfig:
    strategy: str = "none"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"strategy must be one of {STRATEGIES}")


@dataclass
class FeaturesConfig:
    z8_uses_shape_mean: bool = False


@dataclass
class PipelineConfig:
    data_root: str = ""
    out_dir: str = "runs"
    dsp: DspConfig = field(default_factory=DspConfig)
    ot: OtConfig = field(default_factory=OtConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def resolved_data_root(self) -> str:
        return os.environ.get(DATA_ROOT_ENV, "") or self.data_root

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Digest of everything that influences the computed results.

        Paths are excluded so the same experiment reproduces the same digest
        regardless of where its artifacts land.
        """
        payload = self.to_dict()
        payload.pop("data_root")
        payload.pop("out_dir")
        canon = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


def _build(cls, payload: dict, context: str):
    if not isinstance(payload, dict):
        raise InvalidArgument(f"{context}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise InvalidArgument(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        ftype = fields[name].type
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = _build(nested, value, f"{context}.{name}")
        elif name == "class_names" and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
        del ftype
    return cls(**kwargs)


_NESTED = {
    (PipelineConfig, "dsp"): DspConfig,
    (PipelineConfig, "ot"): OtConfig,
    (PipelineConfig, "augment"): AugmentConfig,
    (PipelineConfig, "features"): FeaturesConfig,
    (PipelineConfig, "model"): ModelConfig,
    (PipelineConfig, "train"): TrainConfig,
}


def config_from_dict(payload: dict) -> PipelineConfig:
    """Build a config from a plain dict; unknown keys are rejected."""
    return _build(PipelineConfig, payload, "config")


def load_config(path: Path | str) -> PipelineConfig:
    payload = json.loads(Path(path).read_text())
    return config_from_dict(payload)


def save_config(config: PipelineConfig, path: Path | str) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
