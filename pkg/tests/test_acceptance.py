"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line."""
import json
import threading
import time

import numpy as np
import pytest
from conftest import record_criterion
from scipy.stats import norm

from periodcast import tensor as T
from periodcast.bench import ratios, run_bench
from periodcast.cli import main
from periodcast.data import make_synthetic, split_and_window
from periodcast.decomp import decompose
from periodcast.gradcheck import numerical_grad, rel_error
from periodcast.hpo import (Dimension, RandomSuggester, SearchSpace, expected_improvement, gpr_fit, gpr_predict,
                            run)
from periodcast.model import ModelConfig, Periodformer
from periodcast.predictability import predictability_arrays
from periodcast.training import (TrainConfig, error_metrics, evaluate, l1_loss, persistence_forecast,
                                 seasonal_naive_forecast, train)

from test_hpo import bowl, ei_by_quadrature, matern_loop
from test_predictability import FIX_XT, FIX_XV, FIX_YT, FIX_YV, brute_force

UNIT2 = SearchSpace((Dimension("h1", "float"), Dimension("h2", "float")))


def test_01_gradient_integrity():
    started = time.perf_counter()
    cfg = ModelConfig(n_features=2, input_len=16, horizon=8, period=4, ma_kernel=5, scale=0.7, n_encoder=1,
                      n_decoder=1, d_model=16, n_heads=2, d_ff=16, dropout=0.0)
    model = Periodformer(cfg, seed=0)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(2, 16, 2)), rng.normal(size=(2, 8, 2))
    model.params.zero_grad()
    T.backward(l1_loss(model(x), y))

    def loss():
        with T.no_grad():
            return l1_loss(model(x), y).item()

    worst_name, worst = "", 0.0
    for name, p in model.params.items():
        err = rel_error(p.grad, numerical_grad(loss, p.data))
        if err > worst:
            worst_name, worst = name, err
    seconds = time.perf_counter() - started
    ok = worst < 1e-4 and seconds < 60
    record_criterion(1, "gradient integrity", ok, f"{len(model.params.items())} tensors, "
                     f"{model.params.num_scalars()} scalars, worst rel-err {worst:.2e} at {worst_name}, {seconds:.1f}s")
    assert ok


def test_02_decomposition_identity():
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        length, k = int(rng.integers(1, 300)), 2 * int(rng.integers(0, 40)) + 1
        x = rng.normal(scale=10 ** rng.uniform(-3, 3), size=(length, int(rng.integers(1, 5))))
        s, t = decompose(T.tensor(x), k)
        worst = max(worst, float(np.max(np.abs(s.data + t.data - x))))
    seconds = time.perf_counter() - started
    ok = worst <= 1e-12 and seconds < 5
    record_criterion(2, "decomposition identity", ok, f"max |s+t-x| = {worst:.1e}, {seconds:.2f}s")
    assert ok


def test_03_gate_semantics():
    cfg = ModelConfig(n_features=3, input_len=24, horizon=12, period=6, ma_kernel=7, scale=0.0, d_model=16,
                      n_heads=2, d_ff=16, dropout=0.0)
    model = Periodformer(cfg, seed=0)
    x = np.random.default_rng(0).normal(size=(2, 24, 3))
    before = model.predict(x)
    qk = [p for name, p in model.params.items() if ".query." in name or ".key." in name]
    # weight and bias of query and key, in 2 encoder blocks plus decoder self- and cross-attention
    assert len(qk) == 4 * 4
    rng = np.random.default_rng(99)
    for p in qk:
        p.data[...] = rng.normal(scale=5.0, size=p.shape)
    identical = np.array_equal(model.predict(x), before)
    model.params.zero_grad()
    T.backward(l1_loss(model(x), np.zeros((2, 12, 3))))
    zero_grad = all(np.all(p.grad == 0.0) for p in qk)
    ok = identical and zero_grad
    record_criterion(3, "gate semantics at s=0", ok, f"bit-identical={identical}, Q/K grads all zero={zero_grad}")
    assert ok


def test_04_linear_complexity():
    started = time.perf_counter()
    from periodcast.attention import flop_count
    exact = all(flop_count(2 * n, 2 * n // 4, 64) == 2 * flop_count(n, n // 4, 64) for n in (256, 512, 1024))
    results = run_bench(lengths=(256, 512, 1024), d_model=64, n_periods=4, reps=15, batch=16)
    period_r, full_r = ratios(results, "period"), ratios(results, "full")
    seconds = time.perf_counter() - started
    ok = (exact and all(1.4 <= r <= 2.8 for r in period_r) and all(3.2 <= r <= 5.0 for r in full_r)
          and seconds < 120)
    record_criterion(4, "linear-complexity timing", ok,
                     "period ratios " + ", ".join(f"{r:.2f}" for r in period_r)
                     + "; full ratios " + ", ".join(f"{r:.2f}" for r in full_r) + f"; {seconds:.1f}s")
    assert ok


def test_05_desk_scale_learning():
    series = make_synthetic(4000, 3, 24, slope=0.002, noise=0.1, seed=0)
    train_set, valid_set, test_set = split_and_window(series, 96, 96)
    cfg = ModelConfig(n_features=3, input_len=96, horizon=96, period=24, ma_kernel=25, scale=0.5, d_model=16,
                      n_heads=2, d_ff=32, dropout=0.0)
    model = Periodformer(cfg, seed=0)
    result = train(model, train_set, valid_set, TrainConfig(max_epochs=10, patience=4, batch_size=32, lr=1e-3))
    mse, _ = evaluate(model, test_set)
    persist, _ = error_metrics(persistence_forecast(test_set.samples, 96), test_set.labels)
    naive, _ = error_metrics(seasonal_naive_forecast(test_set.samples, 96, 24), test_set.labels)
    ok = result.epochs_run <= 50 and mse < 0.5 * persist and mse < 0.5 * naive
    record_criterion(5, "desk-scale learning", ok, f"test MSE {mse:.4f} vs persistence {persist:.4f}, "
                     f"seasonal-naive {naive:.4f}; {result.epochs_run} epochs")
    assert ok


def test_06_early_stopping():
    from test_training import BiasModel
    losses = iter([1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.1, 0.1])
    train_set, _, _ = split_and_window(np.random.default_rng(0).normal(size=(200, 1)), 4, 2)
    model = BiasModel(2, 1)
    snapshots = []

    def validate(m):
        snapshots.append(m.w.data.copy())
        return next(losses)

    result = train(model, train_set, None, TrainConfig(max_epochs=8, patience=4, lr=0.01), validate=validate)
    restored = np.array_equal(model.w.data, snapshots[1]) and not np.array_equal(snapshots[1], snapshots[-1])
    ok = result.epochs_run == 6 and result.best_epoch == 2 and restored
    record_criterion(6, "early stopping", ok, f"stopped after epoch {result.epochs_run}, best epoch "
                     f"{result.best_epoch}, epoch-2 params restored={restored}")
    assert ok


def test_07_expected_improvement():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        mu, sigma, best = rng.normal(), rng.uniform(0.01, 2.0), rng.normal()
        worst = max(worst, abs(float(expected_improvement(mu, sigma, best)) - ei_by_quadrature(mu, sigma, best)))
    worked = float(expected_improvement(0.5, 0.1, 0.4))
    ok = worst < 1e-6 and abs(worked - 0.008331) <= 1e-5
    record_criterion(7, "EI correctness", ok, f"max |closed - trapezoid| {worst:.1e}; worked case {worked:.6f}")
    assert ok


def test_08_gpr_soundness():
    rng = np.random.default_rng(0)
    x = rng.random((8, 2))
    y = np.sin(5 * x[:, 0]) + x[:, 1]
    post = gpr_fit(x, y, noise_var=0.0)
    interp = float(np.max(np.abs(gpr_predict(post, x)[0] - y)))
    x1 = np.array([[0.05], [0.2], [0.45], [0.7], [0.9]])
    y1 = np.array([1.0, 0.3, -0.4, 0.8, 2.0])
    ls, sv, nv = np.array([0.25]), 1.3, 1e-3
    post1 = gpr_fit(x1, y1, lengthscales=ls, signal_var=sv, noise_var=nv)
    q = np.linspace(0, 1, 23)[:, None]
    m, s = y1.mean(), y1.std()
    dense = m + s * matern_loop(q, x1, ls, sv) @ np.linalg.solve(
        matern_loop(x1, x1, ls, sv) + (nv + post1.jitter) * np.eye(5), (y1 - m) / s)
    oracle = float(np.max(np.abs(gpr_predict(post1, q)[0] - dense)))
    ok = interp < 1e-8 and oracle < 1e-8
    record_criterion(8, "GPR soundness", ok, f"interpolation error {interp:.1e}, dense-solve gap {oracle:.1e}")
    assert ok


def test_09_mabo_search_quality():
    bests, times = [], []
    for seed in range(5):
        started = time.perf_counter()
        bests.append(run(bowl, UNIT2, n_trials=32, n_workers=4, seed=seed).best.loss)
        times.append(time.perf_counter() - started)
    ok = max(bests) < 0.01 and max(times) < 10
    record_criterion(9, "MABO search quality", ok, "best per seed " + ", ".join(f"{b:.1e}" for b in bests)
                     + f"; slowest run {max(times):.1f}s")
    assert ok


def test_10_mabo_asynchrony():
    def sleeper(h):
        time.sleep(0.5)
        return bowl(h)

    walls = {}
    for workers in (1, 4):
        started = time.perf_counter()
        run(sleeper, UNIT2, n_trials=16, n_workers=workers, seed=0)
        walls[workers] = time.perf_counter() - started
    ratio = walls[4] / walls[1]
    ok = ratio <= 0.4
    record_criterion(10, "MABO asynchrony", ok, f"1 worker {walls[1]:.2f}s, 4 workers {walls[4]:.2f}s, "
                     f"ratio {ratio:.2f}")
    assert ok


def test_11_scheduler_safety():
    lock = threading.Lock()
    active, peak = [0], [0]
    delays = np.random.default_rng(0).uniform(0, 0.002, size=1000)

    def objective(h):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        try:
            i = int(h["h1"] * 999)
            time.sleep(delays[i])
            if i % 7 == 0:
                raise RuntimeError("injected failure")
            return h["h2"]
        finally:
            with lock:
                active[0] -= 1

    result = run(objective, UNIT2, n_trials=1000, n_workers=8, suggester=RandomSuggester(UNIT2, 0))
    ids = sorted(r.trial_id for r in result.trials)
    failed = sum(r.status == "failed" for r in result.trials)
    ok = (ids == list(range(1000)) and result.max_concurrent <= 8 and peak[0] <= 8 and result.free_slots == 8
          and failed > 0 and all(r.status in ("done", "failed") for r in result.trials))
    record_criterion(11, "scheduler safety", ok, f"{len(ids)} records, {failed} injected failures, peak holders "
                     f"{result.max_concurrent}, free slots at end {result.free_slots}")
    assert ok


def test_12_predictability():
    rng = np.random.default_rng(0)
    xt, yt = rng.normal(size=(40, 12)), rng.normal(size=(40, 6))
    self_score = predictability_arrays(xt, yt, xt, yt, k=1).score
    fixture = predictability_arrays(FIX_XT, FIX_YT, FIX_XV, FIX_YV, k=2).score
    oracle = brute_force(FIX_XT, FIX_YT, FIX_XV, FIX_YV, 2)
    bounded = True
    for seed in range(50):
        r = np.random.default_rng(seed)
        sc = predictability_arrays(r.normal(size=(10, 5)), r.normal(size=(10, 2)), r.normal(size=(6, 5)),
                                   r.normal(size=(6, 2)), k=int(r.integers(1, 11))).score
        bounded &= -1.0 <= sc <= 1.0
    ok = self_score == 1.0 and fixture == oracle and bounded
    record_criterion(12, "predictability", ok, f"self score {self_score!r}, fixture {fixture!r} vs oracle "
                     f"{oracle!r}, bounded={bounded}")
    assert ok


def test_13_reproducibility(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    main(["synth", "--out", "s.csv", "--length", "800", "--features", "2", "--period", "12"])
    cfg = {"data": "s.csv", "input_len": 24, "horizon": 12, "period": 12, "ma_kernel": 13, "d_model": 8,
           "n_heads": 2, "d_ff": 16, "epochs": 2, "lr": 0.003, "seed": 11}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    codes = [main(["train", "--config", "c.json", "--out", out]) for out in ("r1", "r2")]
    same = {name: (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
            for name in ("model.ckpt", "summary.json")}
    ok = codes == [0, 0] and all(same.values())
    record_criterion(13, "reproducibility", ok, f"exit codes {codes}, identical {same}")
    assert ok
