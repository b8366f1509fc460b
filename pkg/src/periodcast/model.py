"""Periodformer: decomposition encoder-decoder built on Period-Attention.

Data flow for one window ``x`` of shape ``(L, D_in)``:

* the encoder embeds ``x`` and runs ``N`` layers that each keep only the
  seasonal part of ``sublayer(h) + h`` after a moving average;
* the decoder starts from the last ``ceil(sub_ratio * L)`` steps of ``x``,
  decomposed into seasonal and trend parts and extended by ``O`` placeholder
  rows (zeros for the seasonal part, the subseries mean for the trend);
* every decoder layer strips three moving-average trends off its sublayers
  and adds a learned projection of their sum to the running trend;
* the forecast is the last ``O`` rows of ``project(seasonal) + trend``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .attention import PeriodAttention, PeriodAttentionConfig
from .decomp import check_kernel, decompose, moving_average
from .errors import ConfigError
from .params import ParamStore, conv_params, linear_params


@dataclass(frozen=True)
class ModelConfig:
    n_features: int = 7
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

    def __post_init__(self):
        positive = ("n_features", "input_len", "horizon", "period", "d_model", "n_heads", "d_ff")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_encoder < 1 or self.n_decoder < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if not 0.0 < self.sub_ratio <= 1.0:
            raise ConfigError(f"sub_ratio must lie in (0, 1], got {self.sub_ratio}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.ff_kernel < 1 or self.ff_kernel % 2 == 0:
            raise ConfigError(f"ff_kernel must be odd, got {self.ff_kernel}")
        if self.padding not in ("replicate", "zero"):
            raise ConfigError(f"padding must be 'replicate' or 'zero', got {self.padding!r}")
        for name in ("activation", "ff_activation"):
            if getattr(self, name) not in T.ACTIVATIONS:
                raise ConfigError(f"{name} must be one of {T.ACTIVATIONS}")
        check_kernel(self.ma_kernel)
        self.attention_config()  # validates scale, heads

    @property
    def sub_len(self) -> int:
        return max(1, math.ceil(self.sub_ratio * self.input_len))

    def attention_config(self) -> PeriodAttentionConfig:
        return PeriodAttentionConfig(self.period, self.scale, self.n_heads, self.d_model, self.activation)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class DecoderInputs(NamedTuple):
    seasonal_init: T.Tensor
    trend_init: T.Tensor


def build_inputs(x: T.Tensor, cfg: ModelConfig) -> tuple[T.Tensor, DecoderInputs]:
    """Encoder input plus the decoder's seasonal and trend initializations."""
    sub = x[..., x.shape[-2] - cfg.sub_len:, :]
    dec = decompose(sub, cfg.ma_kernel, cfg.padding)
    lead = sub.shape[:-2]
    zeros = T.Tensor(np.zeros((*lead, cfg.horizon, sub.shape[-1])))
    level = np.broadcast_to(sub.data.mean(axis=-2, keepdims=True), (*lead, cfg.horizon, sub.shape[-1]))
    seasonal = T.concat([dec.seasonal, zeros], axis=-2)
    trend = T.concat([dec.trend, T.Tensor(level.copy())], axis=-2)
    return x, DecoderInputs(seasonal, trend)


class FeedForward:
    """``x + conv(act(conv(x)))`` across the time axis, width d_model -> d_ff -> d_model."""

    def __init__(self, cfg: ModelConfig, store: ParamStore, prefix: str, rng: np.random.Generator):
        self.cfg = cfg
        self.w1, self.b1 = conv_params(store, f"{prefix}.conv1", cfg.ff_kernel, cfg.d_model, cfg.d_ff, rng)
        self.w2, self.b2 = conv_params(store, f"{prefix}.conv2", cfg.ff_kernel, cfg.d_ff, cfg.d_model, rng)

    def __call__(self, x: T.Tensor, rng=None, training=False) -> T.Tensor:
        h = T.activation(T.conv1d(x, self.w1, self.b1, self.cfg.padding), self.cfg.ff_activation)
        h = T.dropout(h, self.cfg.dropout, rng, training)
        h = T.conv1d(h, self.w2, self.b2, self.cfg.padding)
        return x + T.dropout(h, self.cfg.dropout, rng, training)


def _seasonal(y: T.Tensor, cfg: ModelConfig) -> tuple[T.Tensor, T.Tensor]:
    trend = moving_average(y, cfg.ma_kernel, cfg.padding)
    return y - trend, trend


class EncoderLayer:
    def __init__(self, cfg: ModelConfig, store: ParamStore, prefix: str, rng: np.random.Generator):
        self.cfg = cfg
        self.attn = PeriodAttention(cfg.attention_config(), store, f"{prefix}.attn", rng)
        self.ff = FeedForward(cfg, store, f"{prefix}.ff", rng)

    def __call__(self, x: T.Tensor, rng=None, training=False) -> T.Tensor:
        y = x + T.dropout(self.attn(x), self.cfg.dropout, rng, training)
        x1, _ = _seasonal(y, self.cfg)
        out, _ = _seasonal(self.ff(x1, rng, training), self.cfg)
        return out


class DecoderLayer:
    def __init__(self, cfg: ModelConfig, store: ParamStore, prefix: str, rng: np.random.Generator):
        self.cfg = cfg
        self.self_attn = PeriodAttention(cfg.attention_config(), store, f"{prefix}.self_attn", rng)
        self.cross_attn = PeriodAttention(cfg.attention_config(), store, f"{prefix}.cross_attn", rng, cross=True)
        self.ff = FeedForward(cfg, store, f"{prefix}.ff", rng)
        self.w_trend, _ = linear_params(store, f"{prefix}.trend", cfg.d_model, cfg.n_features, rng, bias=False)

    def __call__(self, x_sn: T.Tensor, x_tc: T.Tensor, enc_out: T.Tensor, rng=None, training=False,
                 trace: list | None = None) -> tuple[T.Tensor, T.Tensor]:
        """Return the updated seasonal stream and accumulated trend.

        When ``trace`` is a list, ``(sublayer_input + sublayer_output,
        seasonal, trend_increment)`` is appended for each of the three splits.
        """
        cfg = self.cfg
        y1 = x_sn + T.dropout(self.self_attn(x_sn), cfg.dropout, rng, training)
        s1, tc1 = _seasonal(y1, cfg)
        y2 = s1 + T.dropout(self.cross_attn(s1, enc_out, enc_out), cfg.dropout, rng, training)
        s2, tc2 = _seasonal(y2, cfg)
        y3 = self.ff(s2, rng, training)
        s3, tc3 = _seasonal(y3, cfg)
        if trace is not None:
            trace.extend([(y1, s1, tc1), (y2, s2, tc2), (y3, s3, tc3)])
        x_tc = x_tc + T.linear(tc1 + tc2 + tc3, self.w_trend)
        return s3, x_tc


class Periodformer:
    """The full forecaster; parameters live in ``self.params`` under dotted names."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        self.enc_embed_w, self.enc_embed_b = conv_params(self.params, "enc_embed", 1, cfg.n_features, cfg.d_model, rng)
        self.dec_embed_w, self.dec_embed_b = conv_params(self.params, "dec_embed", 1, cfg.n_features, cfg.d_model, rng)
        self.encoder = [EncoderLayer(cfg, self.params, f"encoder.{i}", rng) for i in range(cfg.n_encoder)]
        self.decoder = [DecoderLayer(cfg, self.params, f"decoder.{i}", rng) for i in range(cfg.n_decoder)]
        self.proj_w, self.proj_b = linear_params(self.params, "projection", cfg.d_model, cfg.n_features, rng)

    def encode(self, x: T.Tensor, rng=None, training=False) -> T.Tensor:
        h = T.dropout(T.conv1d(x, self.enc_embed_w, self.enc_embed_b), self.cfg.dropout, rng, training)
        for layer in self.encoder:
            h = layer(h, rng, training)
        return h

    def forward(self, x, rng: np.random.Generator | None = None, training: bool = False) -> T.Tensor:
        """Forecast ``(..., O, D_in)`` from a window ``(..., L, D_in)``."""
        cfg = self.cfg
        x = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[-2:] != (cfg.input_len, cfg.n_features):
            raise ConfigError(f"expected windows of shape (..., {cfg.input_len}, {cfg.n_features}), got {x.shape}")
        enc_in, dec_in = build_inputs(x, cfg)
        enc = self.encode(enc_in, rng, training)
        s = T.dropout(T.conv1d(dec_in.seasonal_init, self.dec_embed_w, self.dec_embed_b), cfg.dropout, rng, training)
        t = dec_in.trend_init
        for layer in self.decoder:
            s, t = layer(s, t, enc, rng, training)
        out = T.linear(s, self.proj_w, self.proj_b) + t
        return out[..., out.shape[-2] - cfg.horizon:, :]

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Gradient-free forecasts for a stack of windows."""
        x = np.asarray(x, dtype=np.float64)
        with T.no_grad():
            if x.ndim == 2:
                return self.forward(x).data
            parts = [self.forward(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(parts)


# -- checkpoint format ----------------------------------------------------------------------
# 8-byte magic, little-endian uint64 header size, UTF-8 JSON header, then the raw
# little-endian float64 payload of every tensor in header order.
MAGIC = b"PCKPT\x00\x01\x00"


def save_checkpoint(path, model: Periodformer, extra: dict | None = None) -> None:
    tensors = []
    payload = []
    offset = 0
    for name, p in model.params.items():
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset})
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.cfg.to_dict(), "tensors": tensors, "extra": extra or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> tuple[Periodformer, dict]:
    """Rebuild a model from :func:`save_checkpoint` output; returns ``(model, extra)``."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ConfigError(f"{path}: not a periodcast checkpoint")
    (size,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + size])
    data = memoryview(blob)[16 + size:]
    model = Periodformer(ModelConfig.from_dict(header["config"]))
    state = {}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=t["offset"])
        state[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    model.params.load_state(state)
    return model, header["extra"]
