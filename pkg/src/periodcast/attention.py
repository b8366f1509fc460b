"""Gated Period-Attention.

Queries, keys and values are cut into whole periods of ``P`` steps and each
period is scored against every other period as one flattened vector, so a
head builds an ``N_p x N_p`` score matrix instead of ``L x L``.  A scaling
factor ``s`` gates the scores: ``s > 0`` gives ``softmax(s / sqrt(P) * QK^T) V``
and ``s == 0`` drops the scores and returns ``act(V)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .params import ParamStore, linear_params


@dataclass(frozen=True)
class PeriodAttentionConfig:
    period: int
    scale: float
    n_heads: int = 2
    d_model: int = 16
    activation: str = "gelu"

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError(f"period must be >= 1, got {self.period}")
        if self.scale < 0:
            raise ConfigError(f"scaling factor must be >= 0, got {self.scale}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.activation not in T.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def score_scale(self) -> float:
        # the 1/sqrt(P) denominator folded into s once, here
        return self.scale / math.sqrt(self.period)


def num_periods(length: int, period: int) -> int:
    return -(-length // period)


def resize_to_periods(x: T.Tensor, period: int) -> tuple[T.Tensor, int]:
    """Reshape ``(..., len, d)`` into ``(..., d, N_p, P)``.

    When ``len`` is not a multiple of ``P`` the sequence is first left-padded
    by repeating its first step, which keeps the most recent steps aligned to
    period boundaries.
    """
    length, d = x.shape[-2], x.shape[-1]
    if length < 1:
        raise ShapeError("cannot resize an empty sequence")
    n_p = num_periods(length, period)
    extra = n_p * period - length
    if extra:
        x = T.pad(x, extra, 0, "replicate", axis=-2)
    lead = x.shape[:-2]
    x = x.reshape(*lead, n_p, period, d)
    nd = len(lead)
    x = x.permute(*range(nd), nd + 2, nd, nd + 1)
    return x, length


def restore_from_periods(x: T.Tensor, length: int) -> T.Tensor:
    """Inverse of :func:`resize_to_periods`."""
    *lead, d, n_p, period = x.shape
    nd = len(lead)
    x = x.permute(*range(nd), nd + 1, nd + 2, nd).reshape(*lead, n_p * period, d)
    extra = n_p * period - length
    return x[..., extra:, :] if extra else x


def _split_heads(x: T.Tensor, n_heads: int, period: int) -> tuple[T.Tensor, int, int]:
    """``(B, len, d)`` -> ``(B, H, N_p, d_head * P)`` period vectors."""
    periods, length = resize_to_periods(x, period)  # (B, d, N_p, P)
    b, d, n_p, p = periods.shape
    dh = d // n_heads
    h = periods.reshape(b, n_heads, dh, n_p, p).permute(0, 1, 3, 2, 4)
    return h.reshape(b, n_heads, n_p, dh * p), length, n_p


def _merge_heads(x: T.Tensor, n_heads: int, period: int, length: int) -> T.Tensor:
    b, _, n_p, width = x.shape
    dh = width // period
    x = x.reshape(b, n_heads, n_p, dh, period).permute(0, 1, 3, 2, 4)
    return restore_from_periods(x.reshape(b, n_heads * dh, n_p, period), length)


class PeriodAttention:
    """Multi-head Period-Attention sublayer with its own projections.

    Used as self-attention (``keys`` defaults to ``queries``) or, with
    ``cross=True``, as attention from a decoder query stream onto encoder
    keys/values of a different length.
    """

    def __init__(self, cfg: PeriodAttentionConfig, store: ParamStore, prefix: str, rng: np.random.Generator,
                 cross: bool = False):
        self.cfg = cfg
        self.cross = cross
        d = cfg.d_model
        self.wq, self.bq = linear_params(store, f"{prefix}.query", d, d, rng)
        self.wk, self.bk = linear_params(store, f"{prefix}.key", d, d, rng)
        self.wv, self.bv = linear_params(store, f"{prefix}.value", d, d, rng)
        self.wo, self.bo = linear_params(store, f"{prefix}.out", d, d, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(self, queries: T.Tensor, keys: T.Tensor | None = None, values: T.Tensor | None = None) -> T.Tensor:
        keys = queries if keys is None else keys
        values = keys if values is None else values
        unbatched = queries.ndim == 2
        if unbatched:
            queries, keys, values = (t.reshape(1, *t.shape) for t in (queries, keys, values))
        if keys.shape[-2] != values.shape[-2]:
            raise ShapeError(f"keys {keys.shape} and values {values.shape} differ in length")
        for t in (queries, keys, values):
            if t.shape[-1] != self.cfg.d_model:
                raise ShapeError(f"expected feature width {self.cfg.d_model}, got shape {t.shape}")
        out = self._attend(queries, keys, values)
        out = T.linear(out, self.wo, self.bo)
        return out.reshape(*out.shape[1:]) if unbatched else out

    def _attend(self, queries, keys, values) -> T.Tensor:
        cfg = self.cfg
        if cfg.scale == 0:
            # gate closed: no scores.  Cross-attention has no same-length value
            # stream, so the value path runs on the query stream being updated.
            self.last_weights = None
            v = T.linear(queries if self.cross else values, self.wv, self.bv)
            return T.activation(v, cfg.activation)
        q = T.linear(queries, self.wq, self.bq)
        k = T.linear(keys, self.wk, self.bk)
        v = T.linear(values, self.wv, self.bv)
        qh, q_len, _ = _split_heads(q, cfg.n_heads, cfg.period)
        kh, _, _ = _split_heads(k, cfg.n_heads, cfg.period)
        vh, _, _ = _split_heads(v, cfg.n_heads, cfg.period)
        scores = T.matmul(qh, kh.permute(0, 1, 3, 2)) * cfg.score_scale  # (B, H, N_q, N_kv)
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return _merge_heads(T.matmul(weights, vh), cfg.n_heads, cfg.period, q_len)


def period_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor, layer: PeriodAttention) -> T.Tensor:
    """Self-attention form: ``q``, ``k`` and ``v`` must share a length."""
    if layer.cross:
        raise ConfigError("period_attention needs a self-attention layer")
    if not (q.shape[-2] == k.shape[-2] == v.shape[-2]):
        raise ShapeError(f"self-attention needs equal lengths, got {q.shape}, {k.shape}, {v.shape}")
    return layer(q, k, v)


def cross_period_attention(q_from_decoder: T.Tensor, kv_from_encoder: T.Tensor, layer: PeriodAttention) -> T.Tensor:
    if not layer.cross:
        raise ConfigError("cross_period_attention needs a layer built with cross=True")
    return layer(q_from_decoder, kv_from_encoder, kv_from_encoder)


# -- operation counts and raw kernels (benchmarking) -------------------------------------
def flop_count(length: int, period: int, d_model: int, kv_length: int | None = None) -> int:
    """Multiplies in the score and aggregation products of Period-Attention.

    Each head scores ``N_q x N_kv`` pairs of period vectors of width
    ``P * d_head`` and aggregates the same number of weighted vectors, giving
    ``2 * N_q * N_kv * P * d_model`` over all heads (``2 * N_p * L * d`` for
    self-attention when ``P`` divides ``L``).
    """
    if min(length, period, d_model) < 1:
        raise ConfigError("flop_count needs positive length, period and d_model")
    n_q = num_periods(length, period)
    n_kv = num_periods(kv_length or length, period)
    return 2 * n_q * n_kv * period * d_model


def full_attention_flop_count(length: int, d_model: int, kv_length: int | None = None) -> int:
    """Same tally for ordinary ``L x L`` dot-product attention."""
    return 2 * length * (kv_length or length) * d_model


def period_kernel(q: np.ndarray, k: np.ndarray, v: np.ndarray, period: int, scale: float = 1.0) -> np.ndarray:
    """Score and aggregation core on ``(B, len, d)`` arrays with ``len % P == 0``."""
    b, length, d = q.shape
    n_p = length // period
    qp = q.reshape(b, n_p, period * d)
    kp = k.reshape(b, n_p, period * d)
    vp = v.reshape(b, n_p, period * d)
    s = np.matmul(qp, kp.transpose(0, 2, 1)) * (scale / math.sqrt(period))
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    s /= s.sum(axis=-1, keepdims=True)
    return np.matmul(s, vp).reshape(b, length, d)


def full_kernel(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = q.shape[-1]
    s = np.matmul(q, k.transpose(0, 2, 1)) / math.sqrt(d)
    s = np.exp(s - s.max(axis=-1, keepdims=True))
    s /= s.sum(axis=-1, keepdims=True)
    return np.matmul(s, v)
