"""End-to-end jobs behind the CLI subcommands."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from . import bench as bench_mod
from .config import RunConfig, write_resolved
from .data import RawSeries, Scaler, load_csv, make_synthetic, split_and_window, write_csv
from .errors import ConfigError, DataError, NumericError
from .hpo import SearchSpace, periodformer_space, result_to_dict, run
from .model import Periodformer, load_checkpoint, save_checkpoint
from .predictability import predictability, write_report
from .training import error_metrics, evaluate, persistence_forecast, seasonal_naive_forecast, train

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"


def _dump(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_series(cfg: RunConfig) -> RawSeries:
    if cfg.data is None:
        raise ConfigError("no dataset given: set 'data' in the config or pass --data")
    return load_csv(cfg.data, cfg.date_column, cfg.target)


def _step_seconds(stamps: np.ndarray) -> float | None:
    if len(stamps) < 2:
        return None
    return float(np.median(np.diff(stamps).astype("timedelta64[ns]").astype(np.int64)) / 1e9)


def train_job(cfg: RunConfig) -> dict:
    """Train, then write the checkpoint, per-epoch metrics and a test summary under ``cfg.out``."""
    series = load_series(cfg)
    train_set, valid_set, test_set = split_and_window(series, cfg.input_len, cfg.horizon, cfg.split)
    out = Path(cfg.out)
    write_resolved(cfg, out)
    model = Periodformer(cfg.model_config(series.n_features), seed=cfg.seed)
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")

    def on_epoch(record):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    result = train(model, train_set, valid_set, cfg.train_config(), on_epoch=on_epoch)
    mse, mae = evaluate(model, test_set)
    mse_raw, mae_raw = evaluate(model, test_set, raw_scale=True)
    baselines = {}
    for name, pred in (("persistence", persistence_forecast(test_set.samples, cfg.horizon)),
                       ("seasonal_naive", seasonal_naive_forecast(test_set.samples, cfg.horizon, cfg.period))):
        b_mse, b_mae = error_metrics(pred, test_set.labels)
        baselines[name] = {"mse": b_mse, "mae": b_mae}
    summary = {
        "test": {"mse": mse, "mae": mae, "mse_raw": mse_raw, "mae_raw": mae_raw},
        "baselines": baselines,
        "best_epoch": result.best_epoch,
        "best_valid_mae": result.best_valid,
        "epochs_run": result.epochs_run,
        "n_parameters": model.params.num_scalars(),
        "windows": {"train": len(train_set), "valid": len(valid_set), "test": len(test_set)},
    }
    extra = {"scaler": train_set.scaler.to_dict(), "columns": list(series.columns),
             "step_seconds": _step_seconds(series.timestamps)}
    save_checkpoint(out / CHECKPOINT_NAME, model, extra=extra)
    _dump(out / "summary.json", summary)
    return summary


def forecast_job(checkpoint, input_csv, out_dir, date_column: str | int = 0) -> tuple[Path, Path]:
    """Forecast the ``O`` steps after the last ``L`` rows of ``input_csv``.

    Writes ``forecast.csv`` (timestamped, one column per feature, original
    units) and ``forecast_long.csv`` with columns ``t, series, value, kind``
    covering the history window and the forecast.
    """
    model, extra = load_checkpoint(checkpoint)
    cfg = model.cfg
    columns = extra.get("columns")
    scaler = Scaler.from_dict(extra["scaler"])
    series = load_csv(input_csv, date_column)
    missing = [c for c in columns if c not in series.columns]
    if missing:
        raise DataError(f"{input_csv}: columns {missing} used in training are absent; found {series.columns}")
    idx = [series.columns.index(c) for c in columns]
    if len(series) < cfg.input_len:
        raise DataError(f"{input_csv}: need at least {cfg.input_len} rows for one input window, got {len(series)}")
    history = series.values[-cfg.input_len:, idx]
    pred = scaler.denormalize(model.predict(scaler.normalize(history)))

    stamps = series.timestamps[-cfg.input_len:]
    step = _step_seconds(series.timestamps) or extra.get("step_seconds") or 1.0
    future = stamps[-1] + (np.arange(1, cfg.horizon + 1) * step * 1e9).astype("timedelta64[ns]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wide = out / "forecast.csv"
    write_csv(wide, RawSeries(future, pred, list(columns)))

    fmt = lambda ts: pd.to_datetime(ts).strftime("%Y-%m-%d %H:%M:%S")  # noqa: E731
    parts = []
    for kind, ts, vals in (("history", stamps, history), ("forecast", future, pred)):
        for j, name in enumerate(columns):
            parts.append(pd.DataFrame({"t": fmt(ts), "series": name, "value": vals[:, j], "kind": kind}))
    long = out / "forecast_long.csv"
    pd.concat(parts, ignore_index=True).to_csv(long, index=False, float_format="%.17g")
    return wide, long


def search_space(cfg: RunConfig) -> SearchSpace:
    space = SearchSpace.from_json(cfg.space) if cfg.space else periodformer_space()
    unknown = set(space.names) - set(RunConfig.keys())
    if unknown:
        raise ConfigError(f"search space names {sorted(unknown)} are not config keys")
    return space


def hpo_job(cfg: RunConfig, resume: bool = False) -> dict:
    """Search hyperparameters by train-and-validate trials; write the journal and the best config."""
    series = load_series(cfg)
    space = search_space(cfg)
    out = Path(cfg.out)
    write_resolved(cfg, out)

    def objective(h: dict) -> float:
        trial_cfg = cfg.replace(**h)
        train_set, valid_set, _ = split_and_window(series, trial_cfg.input_len, trial_cfg.horizon, trial_cfg.split)
        model = Periodformer(trial_cfg.model_config(series.n_features), seed=trial_cfg.seed)
        return train(model, train_set, valid_set, trial_cfg.train_config()).best_valid

    result = run(objective, space, cfg.trials, cfg.workers, seed=cfg.seed, journal=out / "trials.jsonl",
                 resume=resume)
    if result.best is None:
        raise NumericError(f"all {len(result.trials)} trials failed; see {out / 'trials.jsonl'}")
    best_cfg = cfg.replace(**result.best.params, out=str(out / "best"))
    _dump(out / "best_config.json", best_cfg.to_dict())
    summary = result_to_dict(result)
    summary.pop("wall_seconds")
    _dump(out / "hpo_summary.json", summary)
    return summary


def predictability_job(cfg: RunConfig) -> dict:
    series = load_series(cfg)
    train_set, valid_set, _ = split_and_window(series, cfg.input_len, cfg.horizon, cfg.split)
    write_resolved(cfg, cfg.out)
    report = predictability(train_set, valid_set, cfg.k, cfg.folds)
    write_report(report, cfg.out)
    return report.to_dict()


def bench_job(lengths, d_model: int, n_periods: int, reps: int, batch: int, out_csv) -> list:
    results = bench_mod.run_bench(lengths, d_model, n_periods, reps, batch)
    bench_mod.write_csv(results, out_csv)
    return results


def synth_job(out_csv, length: int = 4000, n_features: int = 3, period: int = 24, slope: float = 0.01,
              noise: float = 0.1, seed: int = 0) -> Path:
    series = make_synthetic(length, n_features, period, slope=slope, noise=noise, seed=seed)
    path = Path(out_csv)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(path, series)
    return path
