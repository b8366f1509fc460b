"""Flat run configuration shared by every CLI subcommand."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .data import DEFAULT_RATIOS
from .errors import ConfigError
from .model import ModelConfig
from .predictability import DEFAULT_K
from .training import TrainConfig

SEED_ENV = "PERIODCAST_SEED"
RESOLVED_NAME = "config.resolved.json"
NULLABLE = frozenset({"data", "target", "space", "seed", "clip_norm"})
STRINGS = frozenset({"data", "target", "space", "out", "activation", "ff_activation", "padding"})


@dataclass
class RunConfig:
    # data
    data: str | None = None
    date_column: str | int = 0
    target: str | None = None
    split: tuple = DEFAULT_RATIOS
    # model (n_features comes from the data)
    input_len: int = 96
    horizon: int = 96
    period: int = 24
    ma_kernel: int = 25
    scale: float = 0.5
    n_encoder: int = 2
    n_decoder: int = 1
    d_model: int = 512
    n_heads: int = 8
    ff_kernel: int = 3
    d_ff: int = 2048
    sub_ratio: float = 0.5
    dropout: float = 0.05
    activation: str = "gelu"
    ff_activation: str = "gelu"
    padding: str = "replicate"
    # training
    epochs: int = 10
    patience: int = 4
    batch_size: int = 32
    lr: float = 1e-4
    clip_norm: float | None = 5.0
    seed: int | None = None
    # search
    trials: int = 32
    workers: int = 8
    space: str | None = None
    # predictability
    k: int = DEFAULT_K
    folds: int = 1
    # outputs
    out: str = "runs/latest"

    def __post_init__(self):
        self._check_types()
        if self.seed is None:
            env = os.environ.get(SEED_ENV)
            try:
                self.seed = int(env) if env not in (None, "") else 0
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or min(self.split) <= 0 or sum(self.split) > 1.0 + 1e-12:
            raise ConfigError(f"split must be three positive ratios summing to at most 1, got {list(self.split)}")
        self.model_config(1)
        self.train_config()
        for name in ("trials", "workers", "k", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    def _check_types(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                if f.name in NULLABLE:
                    continue
                raise ConfigError(f"config key {f.name!r} may not be null")
            if f.name == "date_column":
                ok = isinstance(value, (str, int)) and not isinstance(value, bool)
            elif f.name == "split":
                ok = isinstance(value, (list, tuple)) and all(
                    isinstance(r, (int, float)) and not isinstance(r, bool) for r in value)
            elif f.name in STRINGS:
                ok = isinstance(value, str)
            elif f.name == "seed" or isinstance(f.default, int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            else:  # floats also accept ints
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if not ok:
                raise ConfigError(f"config key {f.name!r} has the wrong type: {value!r}")

    def model_config(self, n_features: int) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(ModelConfig)} - {"n_features"}
        return ModelConfig(n_features=n_features, **{n: getattr(self, n) for n in names})

    def train_config(self) -> TrainConfig:
        return TrainConfig(max_epochs=self.epochs, patience=self.patience, batch_size=self.batch_size, lr=self.lr,
                           seed=self.seed, clip_norm=self.clip_norm)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    def replace(self, **changes) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **changes})

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        unknown = set(d) - set(cls.keys())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def read_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: the config must be a JSON object")
    return doc


def resolve(path=None, overrides: dict | None = None) -> RunConfig:
    """File values, then non-``None`` overrides, then defaults (seed falls back to the environment)."""
    doc = read_json(path) if path is not None else {}
    unknown = set(doc) - set(RunConfig.keys())
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(doc)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESOLVED_NAME
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
