"""Hyperparameter search spaces mapped onto the unit cube."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import qmc

from ..errors import ConfigError

KINDS = ("int", "float", "ordinal")
SCALES = ("linear", "log")


@dataclass(frozen=True)
class Dimension:
    """One searched hyperparameter.

    ``int`` dimensions live on the grid ``low, low + step, ..., high``;
    ``ordinal`` dimensions on the listed ``choices``.  Both are searched as a
    continuous relaxation and snapped to the nearest admissible value.
    """

    name: str
    kind: str
    low: float = 0.0
    high: float = 1.0
    step: int = 1
    scale: str = "linear"
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"{self.name}: scale must be one of {SCALES}, got {self.scale!r}")
        if self.kind == "ordinal":
            if len(self.choices) < 2:
                raise ConfigError(f"{self.name}: an ordinal dimension needs at least two choices")
            return
        if not self.low < self.high:
            raise ConfigError(f"{self.name}: need low < high, got [{self.low}, {self.high}]")
        if self.scale == "log" and self.low <= 0:
            raise ConfigError(f"{self.name}: log scale needs a positive lower bound")
        if self.kind == "int":
            if self.step < 1 or int(self.step) != self.step:
                raise ConfigError(f"{self.name}: step must be a positive integer")
            if int(self.low) != self.low or int(self.high) != self.high:
                raise ConfigError(f"{self.name}: integer bounds must be whole numbers")
            if (self.high - self.low) % self.step:
                raise ConfigError(f"{self.name}: high - low must be a multiple of step {self.step}")

    @property
    def grid(self) -> np.ndarray | None:
        """Admissible values for discrete dimensions, ``None`` for continuous ones."""
        if self.kind == "ordinal":
            return np.asarray(self.choices)
        if self.kind == "int":
            return np.arange(int(self.low), int(self.high) + 1, int(self.step))
        return None

    def _warp(self, v: float) -> float:
        if self.scale == "log":
            return (math.log(v) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (v - self.low) / (self.high - self.low)

    def _unwarp(self, u: float) -> float:
        if self.scale == "log":
            return math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        return self.low + u * (self.high - self.low)

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == "ordinal":
            return self.choices[int(round(u * (len(self.choices) - 1)))]
        if self.kind == "int":
            # nearest grid point in the warped coordinate, so log grids round consistently
            grid = self.grid
            warped = np.array([self._warp(g) for g in grid])
            return int(grid[int(np.argmin(np.abs(warped - u)))])
        return min(max(self._unwarp(u), self.low), self.high)

    def to_unit(self, value) -> float:
        if self.kind == "ordinal":
            try:
                idx = list(self.choices).index(value)
            except ValueError:
                raise ConfigError(f"{self.name}: {value!r} is not one of {self.choices}") from None
            return idx / (len(self.choices) - 1)
        return min(max(self._warp(float(value)), 0.0), 1.0)

    def contains(self, value) -> bool:
        if self.kind == "ordinal":
            return value in self.choices
        if not self.low <= value <= self.high:
            return False
        if self.kind == "int":
            return int(value) == value and (value - self.low) % self.step == 0
        return True

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "ordinal":
            out["choices"] = list(self.choices)
        else:
            out.update(low=self.low, high=self.high, scale=self.scale)
            if self.kind == "int":
                out["step"] = self.step
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Dimension":
        d = dict(d)
        unknown = set(d) - {"name", "kind", "low", "high", "step", "scale", "choices"}
        if unknown:
            raise ConfigError(f"unknown search-space keys: {sorted(unknown)}")
        if "name" not in d or "kind" not in d:
            raise ConfigError("every dimension needs a name and a kind")
        if "choices" in d:
            d["choices"] = tuple(d["choices"])
        return cls(**d)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.dims:
            raise ConfigError("a search space needs at least one dimension")
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in {names}")

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def from_unit(self, u: Sequence[float]) -> dict:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ConfigError(f"expected a point of length {self.dim}, got shape {u.shape}")
        return {d.name: d.from_unit(x) for d, x in zip(self.dims, u)}

    def to_unit(self, params: dict) -> np.ndarray:
        missing = set(self.names) - set(params)
        if missing:
            raise ConfigError(f"missing hyperparameters: {sorted(missing)}")
        return np.array([d.to_unit(params[d.name]) for d in self.dims])

    def snap(self, u: np.ndarray) -> np.ndarray:
        """Unit coordinates of the admissible point nearest to each row of ``u``."""
        u = np.atleast_2d(u)
        return np.stack([self.to_unit(self.from_unit(row)) for row in u])

    def contains(self, params: dict) -> bool:
        return set(params) == set(self.names) and all(d.contains(params[d.name]) for d in self.dims)

    def sobol(self, n: int, seed: int) -> np.ndarray:
        """``n`` scrambled Sobol points in the unit cube (first point fixed by ``seed``)."""
        m = max(0, math.ceil(math.log2(max(n, 1))))
        pts = qmc.Sobol(self.dim, scramble=True, seed=seed).random_base2(m)
        return pts[:n]

    def to_dict(self) -> dict:
        return {"dimensions": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        if set(d) != {"dimensions"}:
            raise ConfigError("a search-space document has exactly one key, 'dimensions'")
        return cls(tuple(Dimension.from_dict(x) for x in d["dimensions"]))

    @classmethod
    def from_json(cls, path) -> "SearchSpace":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"search-space file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(doc)


def periodformer_space() -> SearchSpace:
    """Default space: input length, moving-average kernel, gate scale and learning rate."""
    return SearchSpace((
        Dimension("input_len", "int", 16, 192, step=16),
        Dimension("ma_kernel", "int", 27, 327, step=20),
        Dimension("scale", "float", 0.0, 1.0),
        Dimension("lr", "float", 1e-5, 1e-3, scale="log"),
    ))
