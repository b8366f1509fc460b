"""L1 training with Adam, early stopping on validation loss, and MSE/MAE evaluation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import tensor as T
from .data import WindowedDataset
from .errors import ConfigError, NumericError
from .params import ParamStore

log = logging.getLogger(__name__)


class Trainable(Protocol):
    params: ParamStore

    def __call__(self, x, rng=None, training: bool = False) -> T.Tensor: ...


def l1_loss(pred: T.Tensor, target) -> T.Tensor:
    """Mean absolute deviation over all elements."""
    return (pred - target).abs().mean()


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update using the gradients held by ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values())))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad *= factor
    return total


def predict(model: Trainable, samples: np.ndarray, batch_size: int = 256) -> np.ndarray:
    with T.no_grad():
        return np.concatenate([model(samples[i:i + batch_size]).data
                               for i in range(0, len(samples), batch_size)])


def error_metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def evaluate(model: Trainable, dataset: WindowedDataset, batch_size: int = 256,
             raw_scale: bool = False) -> tuple[float, float]:
    """``(mse, mae)`` over every window; normalized scale unless ``raw_scale``."""
    pred = predict(model, dataset.samples, batch_size)
    target = dataset.labels
    if raw_scale:
        pred, target = dataset.scaler.denormalize(pred), dataset.scaler.denormalize(target)
    return error_metrics(pred, target)


def persistence_forecast(samples: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed step."""
    return np.repeat(samples[..., -1:, :], horizon, axis=-2)


def seasonal_naive_forecast(samples: np.ndarray, horizon: int, period: int) -> np.ndarray:
    """Repeat the last observed period."""
    last = samples[..., samples.shape[-2] - period:, :]
    reps = -(-horizon // period)
    return np.concatenate([last] * reps, axis=-2)[..., :horizon, :]


@dataclass
class TrainConfig:
    max_epochs: int = 10
    patience: int = 4
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


@dataclass
class TrainState:
    epoch: int = 0
    best_valid: float = float("inf")
    best_epoch: int = 0
    since_improvement: int = 0

    def update(self, valid_loss: float) -> bool:
        """Record one epoch's validation loss; True when it strictly improved."""
        self.epoch += 1
        if valid_loss < self.best_valid:
            self.best_valid = valid_loss
            self.best_epoch = self.epoch
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        return False


@dataclass
class TrainResult:
    best_valid: float
    best_epoch: int
    epochs_run: int
    history: list[dict]
    state: dict[str, np.ndarray]


def train(model: Trainable, train_set: WindowedDataset, valid_set: WindowedDataset | None,
          cfg: TrainConfig, validate: Callable[[Trainable], float] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Fit ``model`` in place and leave it holding its best-validation weights.

    The validation loss is the MAE on ``valid_set`` unless ``validate`` is
    given.  Training stops once ``cfg.patience`` consecutive epochs pass
    without a strict improvement.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState(lr=cfg.lr)
    state = TrainState()
    best_params = model.params.state()
    history = []
    for _ in range(cfg.max_epochs):
        started = time.perf_counter()
        losses = []
        for step, (x, y) in enumerate(train_set.batches(cfg.batch_size, rng)):
            model.params.zero_grad()
            loss = l1_loss(model(x, rng, training=True), y)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite training loss {value} at epoch {state.epoch + 1}, step {step}")
            T.backward(loss)
            if cfg.clip_norm is not None:
                clip_grad_norm(model.params, cfg.clip_norm)
            adam_step(model.params, opt)
            losses.append(value)
        if validate is not None:
            valid_mse, valid_mae = float("nan"), float(validate(model))
        elif valid_set is not None:
            valid_mse, valid_mae = evaluate(model, valid_set, cfg.batch_size * 8)
        else:
            raise ConfigError("train() needs a validation set or a validate callback")
        if not np.isfinite(valid_mae):
            raise NumericError(f"non-finite validation loss at epoch {state.epoch + 1}")
        if state.update(valid_mae):
            best_params = model.params.state()
        record = {"epoch": state.epoch, "train_loss": float(np.mean(losses)), "valid_mse": valid_mse,
                  "valid_mae": valid_mae, "seconds": time.perf_counter() - started}
        history.append(record)
        log.debug("epoch %d: %s", state.epoch, json.dumps(record))
        if on_epoch is not None:
            on_epoch(record)
        if state.since_improvement >= cfg.patience:
            log.info("early stop after epoch %d (best epoch %d)", state.epoch, state.best_epoch)
            break
    model.params.load_state(best_params)
    return TrainResult(state.best_valid, state.best_epoch, state.epoch, history, best_params)
