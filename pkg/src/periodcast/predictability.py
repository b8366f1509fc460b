"""Predictability score: how well the labels of the nearest training inputs reproduce validation labels."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import WindowedDataset
from .errors import ConfigError

DEFAULT_K = 10


@dataclass
class PredictabilityReport:
    score: float
    k: int
    similarity: str = "cosine"
    n_pairs: int = 0
    n_skipped: int = 0
    fold_scores: list[float] = field(default_factory=list)
    fold_sizes: list[int] = field(default_factory=list)
    fold_bounds: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fold_bounds"] = [list(b) for b in self.fold_bounds]
        return d


def _flatten(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(len(a), -1)


def _sq_norms(a: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, a)


def _pair_cosine(a: np.ndarray, b: np.ndarray, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    # same reduction as _sq_norms, so identical vectors give exactly 1
    return np.einsum("ij,ij->i", a, b) / np.sqrt(na * nb)


def top_k(sims: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties broken by lower index."""
    if k >= len(sims):
        return np.argsort(-sims, kind="stable")[:k]
    kth = np.partition(sims, len(sims) - k)[len(sims) - k]
    cand = np.flatnonzero(sims >= kth)
    return cand[np.argsort(-sims[cand], kind="stable")][:k]


def predictability_arrays(train_x, train_y, valid_x, valid_y, k: int = DEFAULT_K, folds: int = 1,
                          block: int = 512) -> PredictabilityReport:
    """Score on explicit window arrays, shaped ``(N, ...)`` and flattened per row.

    For each validation pair the ``k`` training inputs most cosine-similar to
    its input are found; the pair's contribution is the mean cosine
    similarity between its label and their labels.  Pairs or training rows
    with a zero-norm input or label are skipped with a warning.
    """
    xt, yt, xv, yv = _flatten(train_x), _flatten(train_y), _flatten(valid_x), _flatten(valid_y)
    if len(xt) != len(yt) or len(xv) != len(yv):
        raise ConfigError("inputs and labels must have the same number of windows")
    if xt.shape[1] != xv.shape[1] or yt.shape[1] != yv.shape[1]:
        raise ConfigError(f"train and validation windows differ in size: {xt.shape[1:]}+{yt.shape[1:]} "
                          f"vs {xv.shape[1:]}+{yv.shape[1:]}")
    if k < 1 or k > len(xt):
        raise ConfigError(f"K must be in [1, {len(xt)}] (training windows), got {k}")
    if folds < 1 or folds > max(len(xv), 1):
        raise ConfigError(f"folds must be in [1, {len(xv)}], got {folds}")

    nxt, nyt, nxv, nyv = _sq_norms(xt), _sq_norms(yt), _sq_norms(xv), _sq_norms(yv)
    usable = (nxt > 0) & (nyt > 0)
    if not usable.all():
        warnings.warn(f"{int((~usable).sum())} training windows have a zero-norm input or label and are ignored",
                      RuntimeWarning, stacklevel=2)
        if usable.sum() < k:
            raise ConfigError(f"only {int(usable.sum())} usable training windows for K={k}")
    train_idx = np.flatnonzero(usable)
    xt_u, yt_u, nxt_u, nyt_u = xt[train_idx], yt[train_idx], nxt[train_idx], nyt[train_idx]

    contrib = np.full(len(xv), np.nan)
    skip = (nxv == 0) | (nyv == 0)
    if skip.any():
        warnings.warn(f"{int(skip.sum())} validation windows have a zero-norm input or label and are skipped",
                      RuntimeWarning, stacklevel=2)
    for start in range(0, len(xv), block):
        stop = min(start + block, len(xv))
        sims = (xv[start:stop] @ xt_u.T) / np.sqrt(nxv[start:stop, None] * nxt_u[None, :])
        for row, i in enumerate(range(start, stop)):
            if skip[i]:
                continue
            sel = top_k(sims[row], k)
            y = np.broadcast_to(yv[i], (k, yv.shape[1]))
            cos = _pair_cosine(yt_u[sel], y, nyt_u[sel], np.full(k, nyv[i]))
            contrib[i] = np.mean(np.clip(cos, -1.0, 1.0))

    bounds = [(int(b[0]), int(b[-1]) + 1) for b in np.array_split(np.arange(len(xv)), folds)]
    fold_scores, fold_sizes = [], []
    for lo, hi in bounds:
        vals = contrib[lo:hi][~np.isnan(contrib[lo:hi])]
        fold_sizes.append(int(len(vals)))
        fold_scores.append(float(np.mean(vals)) if len(vals) else float("nan"))
    kept = contrib[~np.isnan(contrib)]
    score = float(np.mean(kept)) if len(kept) else float("nan")
    return PredictabilityReport(score, k, "cosine", int(len(kept)), int(skip.sum()), fold_scores, fold_sizes, bounds)


def predictability(train: WindowedDataset, valid: WindowedDataset, k: int = DEFAULT_K,
                   folds: int = 1) -> PredictabilityReport:
    """Score on the (normalized) windows of two datasets."""
    if (train.input_len, train.horizon) != (valid.input_len, valid.horizon):
        raise ConfigError(f"window shapes differ: L={train.input_len}, O={train.horizon} "
                          f"vs L={valid.input_len}, O={valid.horizon}")
    return predictability_arrays(train.samples, train.labels, valid.samples, valid.labels, k, folds)


def write_report(report: PredictabilityReport, out_dir) -> tuple[Path, Path]:
    """Write ``predictability.json`` and the per-fold ``predictability_folds.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / "predictability.json", out / "predictability_folds.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "start", "stop", "n_pairs", "score"])
        for i, ((lo, hi), n, s) in enumerate(zip(report.fold_bounds, report.fold_sizes, report.fold_scores)):
            w.writerow([i, lo, hi, n, repr(s)])
    return json_path, csv_path
