"""CSV ingestion, z-score normalization and Input-L-predict-O windowing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

STD_EPS = 1e-8
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class RawSeries:
    timestamps: np.ndarray
    values: np.ndarray
    columns: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[1] < 1:
            raise DataError("series needs at least one feature column")
        if len(self.timestamps) != len(self.values):
            raise DataError("timestamps and values differ in length")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def select(self, column: str) -> "RawSeries":
        """Univariate view holding only ``column``."""
        if column not in self.columns:
            raise DataError(f"column {column!r} not found; available: {self.columns}")
        j = self.columns.index(column)
        return RawSeries(self.timestamps, self.values[:, j:j + 1].copy(), [column])


def _parse_timestamps(col: pd.Series, name: str) -> np.ndarray:
    numeric = pd.to_numeric(col, errors="coerce")
    if numeric.notna().all():
        return pd.to_datetime(numeric, unit="s").to_numpy()
    parsed = pd.to_datetime(col, errors="coerce", format="ISO8601")
    bad = parsed.isna().to_numpy().nonzero()[0]
    if bad.size:
        row = int(bad[0])
        raise DataError(f"unparseable timestamp {col.iloc[row]!r} at row {row + 1}, column {name!r}")
    return parsed.to_numpy()


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def load_csv(path, date_column: str | int = 0, target: str | None = None) -> RawSeries:
    """Read a timestamped CSV into a :class:`RawSeries`.

    Parameters
    ----------
    path : str or Path
        File with a header row; one timestamp column, all others numeric.
    date_column : str or int
        Name or position of the timestamp column.
    target : str, optional
        Keep only this column (univariate mode).

    Raises
    ------
    DataError
        On missing or non-numeric cells (row and column are reported) and on
        timestamps that are not strictly increasing.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise DataError(f"{path}: need a timestamp column and at least one value column")
    date_name = frame.columns[date_column] if isinstance(date_column, int) else date_column
    if date_name not in frame.columns:
        raise DataError(f"{path}: no timestamp column {date_name!r}")
    stamps = _parse_timestamps(frame[date_name], date_name)

    value_cols = [c for c in frame.columns if c != date_name]
    values = np.empty((len(frame), len(value_cols)))
    for j, name in enumerate(value_cols):
        raw = frame[name].str.strip()
        conv = np.array([_to_float(cell) for cell in raw], dtype=np.float64)
        bad = ~np.isfinite(conv)
        if bad.any():
            row = int(bad.nonzero()[0][0])
            cell = raw.iloc[row]
            what = "missing value" if cell == "" else f"non-numeric value {cell!r}"
            raise DataError(f"{path}: {what} at row {row + 1}, column {name!r}")
        values[:, j] = conv

    if len(stamps) > 1:
        steps = np.diff(stamps)
        bad = (steps <= np.timedelta64(0)).nonzero()[0]
        if bad.size:
            raise DataError(f"{path}: timestamps not strictly increasing at row {int(bad[0]) + 2}")
    series = RawSeries(stamps, values, value_cols)
    return series.select(target) if target is not None else series


def write_csv(path, series: RawSeries, date_column: str = "date") -> None:
    frame = pd.DataFrame(series.values, columns=series.columns)
    frame.insert(0, date_column, pd.to_datetime(series.timestamps).strftime("%Y-%m-%d %H:%M:%S"))
    frame.to_csv(path, index=False, float_format="%.17g")


@dataclass
class Scaler:
    """Per-feature z-score transform fitted on training rows."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        # constant features: leave them centered at zero instead of dividing by ~0
        std = np.where(std < STD_EPS, 1.0, std)
        return cls(mean, std)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def window_count(length: int, input_len: int, horizon: int) -> int:
    return max(length - input_len - horizon + 1, 0)


@dataclass
class WindowedDataset:
    """Sliding (sample, label) pairs over one normalized split.

    ``samples[i]`` is rows ``i .. i+L-1`` of the split and ``labels[i]`` the
    ``O`` rows right after it.  Both are read-only strided views of
    ``values``; nothing is copied.
    """

    values: np.ndarray
    input_len: int
    horizon: int
    scaler: Scaler
    offset: int = 0
    name: str = ""
    _samples: np.ndarray = field(init=False, repr=False)
    _labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = window_count(len(self.values), self.input_len, self.horizon)
        if n < 1:
            raise ConfigError(
                f"{self.name or 'split'} has {len(self.values)} rows; at least "
                f"{self.input_len + self.horizon} are needed for L={self.input_len}, O={self.horizon}"
            )
        self.values.setflags(write=False)
        windows = np.lib.stride_tricks.sliding_window_view(
            self.values, self.input_len + self.horizon, axis=0
        )  # (N, D, L+O)
        windows = windows.transpose(0, 2, 1)
        self._samples = windows[:, : self.input_len]
        self._labels = windows[:, self.input_len:]

    def __len__(self) -> int:
        return self._samples.shape[0]

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def batches(self, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(x, y)`` arrays; shuffled when ``rng`` is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self._samples[idx], self._labels[idx]


def split_bounds(length: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> list[tuple[int, int]]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {list(ratios)}")
    n_train = int(length * ratios[0])
    n_valid = int(length * ratios[1])
    return [(0, n_train), (n_train, n_train + n_valid), (n_train + n_valid, length)]


def split_and_window(series: RawSeries | np.ndarray, input_len: int, horizon: int,
                     ratios: Sequence[float] = DEFAULT_RATIOS):
    """Chronologically split, normalize with train statistics, and window.

    Returns
    -------
    (train, valid, test) : tuple of WindowedDataset
    """
    if input_len < 1 or horizon < 1:
        raise ConfigError(f"L and O must be >= 1, got L={input_len}, O={horizon}")
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    bounds = split_bounds(len(values), ratios)
    scaler = Scaler.fit(values[bounds[0][0]:bounds[0][1]])
    normed = scaler.normalize(values)
    out = []
    for name, (lo, hi) in zip(("train", "valid", "test"), bounds):
        out.append(WindowedDataset(normed[lo:hi].copy(), input_len, horizon, scaler, offset=lo, name=name))
    return tuple(out)


def make_synthetic(length: int = 4000, n_features: int = 3, period: int = 24, slope: float = 0.01,
                   amplitude: float = 1.0, noise: float = 0.1, seed: int = 0,
                   start: str = "2020-01-01", freq: str = "h") -> RawSeries:
    """Sinusoid of fixed period plus linear trend plus Gaussian noise.

    Each feature gets its own phase and a slightly different amplitude so the
    channels are not copies of each other.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)[:, None]
    phase = rng.uniform(0, 2 * np.pi, size=n_features)
    amps = amplitude * (1.0 + 0.25 * np.arange(n_features))
    values = amps * np.sin(2 * np.pi * t / period + phase) + slope * t + rng.normal(0, noise, (length, n_features))
    stamps = pd.date_range(start, periods=length, freq=freq).to_numpy()
    return RawSeries(stamps, values, [f"x{j}" for j in range(n_features)])
