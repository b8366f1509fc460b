"""Named parameter storage and weight initialization."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError


class ParamStore:
    """Ordered mapping from dotted names to learnable tensors."""

    def __init__(self):
        self._params: dict[str, T.Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> T.Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = T.parameter(value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> T.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_scalars(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into the existing tensors (names and shapes must match)."""
        missing = set(self._params) ^ set(state)
        if missing:
            raise ConfigError(f"parameter names do not match: {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"parameter {k!r}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def linear_params(store: ParamStore, prefix: str, d_in: int, d_out: int, rng: np.random.Generator,
                  bias: bool = True) -> tuple[T.Tensor, T.Tensor | None]:
    w = store.add(f"{prefix}.weight", glorot(rng, d_in, d_out, (d_in, d_out)))
    b = store.add(f"{prefix}.bias", np.zeros(d_out)) if bias else None
    return w, b


def conv_params(store: ParamStore, prefix: str, kernel: int, d_in: int, d_out: int,
                rng: np.random.Generator, bias: bool = True) -> tuple[T.Tensor, T.Tensor | None]:
    w = store.add(f"{prefix}.weight", glorot(rng, kernel * d_in, d_out, (kernel, d_in, d_out)))
    b = store.add(f"{prefix}.bias", np.zeros(d_out)) if bias else None
    return w, b
