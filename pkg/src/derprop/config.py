"""Training and data configuration with strict JSON round-trips.

Config files are flat JSON mirrors of the dataclasses below.  Unknown
keys are rejected (typos in ablation scripts should fail loudly), and
the resolved configuration written back by a run contains every field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .losses import DerLossSpec, LossWeights
from .model import ToyModelConfig
from .scenes import AugmentConfig, SceneParams


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset layout used by the CLI and ablation drivers."""

    height: int = 32
    width: int = 32
    classes: int = 4
    num_train: int = 16
    num_val: int = 8
    blob_count: int = 6
    noise_sigma: float = 0.25
    seed: int = 0

    @property
    def scene_params(self) -> SceneParams:
        return SceneParams(blob_count=self.blob_count, noise_sigma=self.noise_sigma)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 0.5
    optimizer_momentum: float = 0.0
    labeled_fraction: float = 0.125
    tau: float = 0.95
    dlp_enabled: bool = True
    der_loss_enabled: bool = True
    momentum_enabled: bool = True
    der_reduction: str = "mean"
    batch_schedule: str = "round_robin"
    maps_every: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    der_spec: DerLossSpec = field(default_factory=DerLossSpec)
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_schedule != "round_robin":
            raise ValueError(f"unknown batch schedule {self.batch_schedule!r}")


_NESTED = {
    "weights": LossWeights,
    "der_spec": DerLossSpec,
    "model": ToyModelConfig,
    "augment": AugmentConfig,
}


def _dataclass_from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {path!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config key(s) under {path!r}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if cls is TrainConfig and name in _NESTED:
            kwargs[name] = _dataclass_from_dict(_NESTED[name], value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def train_config_from_dict(data: dict) -> TrainConfig:
    return _dataclass_from_dict(TrainConfig, data, "train")


def data_config_from_dict(data: dict) -> DataConfig:
    return _dataclass_from_dict(DataConfig, data, "data")


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path) -> tuple[TrainConfig, DataConfig]:
    """Read a {"train": ..., "data": ...} JSON file with strict keys."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("run config must be a JSON object")
    unknown = sorted(set(raw) - {"train", "data"})
    if unknown:
        raise ValueError(f"unknown top-level config key(s): {', '.join(unknown)}")
    train_cfg = train_config_from_dict(raw.get("train", {}))
    data_cfg = data_config_from_dict(raw.get("data", {}))
    if train_cfg.model.num_classes != data_cfg.classes:
        raise ValueError(
            f"model.num_classes ({train_cfg.model.num_classes}) must match "
            f"data.classes ({data_cfg.classes})"
        )
    return train_cfg, data_cfg


def run_config_to_json(train_cfg: TrainConfig, data_cfg: DataConfig) -> str:
    payload = {"train": config_to_dict(train_cfg), "data": config_to_dict(data_cfg)}
    return json.dumps(payload, indent=2, sort_keys=True)
