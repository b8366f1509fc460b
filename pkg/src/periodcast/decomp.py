"""Moving-average smoothing and the seasonal/trend split."""
from __future__ import annotations

from typing import NamedTuple

from . import tensor as T
from .errors import ConfigError


class Decomposition(NamedTuple):
    seasonal: T.Tensor
    trend: T.Tensor


def check_kernel(k: int) -> int:
    if int(k) != k or k < 1 or k % 2 == 0:
        raise ConfigError(f"moving-average kernel must be a positive odd integer, got {k}")
    return int(k)


def moving_average(x: T.Tensor, k: int, padding: str = "replicate") -> T.Tensor:
    """Centered mean over ``k`` steps of the time axis (second to last).

    The series is padded by ``(k - 1) / 2`` steps at each end so the output
    has the input's length.
    """
    k = check_kernel(k)
    if k == 1:
        return x
    half = (k - 1) // 2
    return T.window_mean(T.pad(x, half, half, padding, axis=-2), k, axis=-2)


def decompose(x: T.Tensor, k: int, padding: str = "replicate") -> Decomposition:
    trend = moving_average(x, k, padding)
    return Decomposition(x - trend, trend)
