"""Wall-time and operation-count comparison of Period-Attention against full attention."""
from __future__ import annotations

import csv
import time
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import flop_count, full_attention_flop_count, full_kernel, period_kernel
from .errors import ConfigError

CSV_COLUMNS = ("kernel", "length", "reps", "median_seconds", "op_count")
KERNELS = ("period", "full")


@dataclass(frozen=True)
class BenchResult:
    kernel: str
    length: int
    reps: int
    median_seconds: float
    op_count: int


def time_call(fn: Callable[[], object], reps: int, warmup: int = 2) -> float:
    """Median wall time of ``fn`` over ``reps`` calls after ``warmup`` untimed ones."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_bench(lengths: Sequence[int] = (256, 512, 1024), d_model: int = 64, n_periods: int = 4, reps: int = 9,
              batch: int = 16, seed: int = 0, warmup: int = 2) -> list[BenchResult]:
    """Time both kernels at each length, one thread, kernels never run concurrently.

    The period count is held at ``n_periods`` by setting ``P = L / n_periods``,
    so Period-Attention work grows linearly in ``L`` while full attention
    grows quadratically.
    """
    lengths = [int(x) for x in lengths]
    if not lengths or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ConfigError(f"lengths must be non-empty and strictly ascending, got {lengths}")
    if reps < 5:
        raise ConfigError(f"need at least 5 repetitions for a stable median, got {reps}")
    if n_periods < 1 or any(length % n_periods for length in lengths):
        raise ConfigError(f"every length must be divisible by the period count {n_periods}")
    if d_model < 1 or batch < 1:
        raise ConfigError("d_model and batch must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    with threadpool_limits(limits=1):
        for kernel in KERNELS:
            for length in lengths:
                q, k, v = (rng.standard_normal((batch, length, d_model)) for _ in range(3))
                if kernel == "period":
                    period = length // n_periods
                    fn = lambda: period_kernel(q, k, v, period)  # noqa: E731
                    ops = flop_count(length, period, d_model)
                else:
                    fn = lambda: full_kernel(q, k, v)  # noqa: E731
                    ops = full_attention_flop_count(length, d_model)
                median = time_call(fn, reps, warmup)
                results.append(BenchResult(kernel, length, reps, median, ops))
    return results


def ratios(results: Sequence[BenchResult], kernel: str, attr: str = "median_seconds") -> list[float]:
    """Successive ratios ``value(L_{i+1}) / value(L_i)`` for one kernel."""
    vals = [getattr(r, attr) for r in sorted((r for r in results if r.kernel == kernel), key=lambda r: r.length)]
    return [b / a for a, b in zip(vals, vals[1:])]


def write_csv(results: Sequence[BenchResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow(astuple(r))
    return path


def read_csv(path) -> list[BenchResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BenchResult(r["kernel"], int(r["length"]), int(r["reps"]), float(r["median_seconds"]),
                        int(r["op_count"])) for r in rows]
