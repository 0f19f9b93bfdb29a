"""Model and training configuration, YAML loading and config hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 12
    feat_dim: int = 32
    heads: int = 4
    k: int = 10
    sim_dim: int = 16
    hidden: int = 16
    coord_scale: float = 0.1
    # Ablation toggles; all four on is the full model, all off the baseline.
    diff: bool = True
    gat: bool = True
    geo: bool = True
    att: bool = True

    def __post_init__(self):
        if self.feat_dim % self.heads:
            raise ConfigError(f"feat_dim {self.feat_dim} is not divisible by heads {self.heads}")
        for name in ("num_classes", "feat_dim", "heads", "k", "sim_dim", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.coord_scale <= 0:
            raise ConfigError("coord_scale must be positive")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    max_nodes: int = 50
    val_fraction: float = 0.1
    balanced: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "max_nodes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


def _build(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        if name == "model":
            value = _build(ModelConfig, value or {}, f"{where}.model")
        elif name == "betas":
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def model_config_from_dict(data: dict) -> ModelConfig:
    return _build(ModelConfig, dict(data), "model")


def train_config_from_dict(data: dict) -> TrainConfig:
    return _build(TrainConfig, dict(data), "config")


def load_train_config(path) -> TrainConfig:
    """Read a YAML training config; top level holds training keys and a ``model`` section."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return train_config_from_dict(data)


def config_hash(obj) -> str:
    """Stable short hash of a config (dataclass or plain mapping)."""
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


ABLATIONS = {
    "baseline": dict(diff=False, gat=False, geo=False, att=False),
    "diff": dict(diff=True, gat=False, geo=False, att=False),
    "diff-gat": dict(diff=True, gat=True, geo=False, att=False),
    "diff-gat-geo": dict(diff=True, gat=True, geo=True, att=False),
    "full": dict(diff=True, gat=True, geo=True, att=True),
}
