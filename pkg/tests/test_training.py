import numpy as np
import pytest

from periodcast import tensor as T
from periodcast.data import make_synthetic, split_and_window
from periodcast.errors import ConfigError, NumericError
from periodcast.model import ModelConfig, Periodformer
from periodcast.params import ParamStore
from periodcast.training import (AdamState, TrainConfig, TrainState, adam_step, clip_grad_norm, error_metrics,
                                 evaluate, l1_loss, persistence_forecast, seasonal_naive_forecast, train)


class BiasModel:
    """Predicts a learned constant block regardless of input."""

    def __init__(self, horizon, d, fill=0.0):
        self.params = ParamStore()
        self.w = self.params.add("w", np.full((horizon, d), fill))

    def __call__(self, x, rng=None, training=False):
        x = x.data if isinstance(x, T.Tensor) else np.asarray(x)
        return T.Tensor(np.zeros((x.shape[0], *self.w.shape))) + self.w


class RampModel:
    """Linear extrapolation of the last two steps; exact on ramps."""

    def __init__(self, horizon):
        self.params = ParamStore()
        self.horizon = horizon

    def __call__(self, x, rng=None, training=False):
        x = np.asarray(x.data if isinstance(x, T.Tensor) else x)
        step = x[:, -1:] - x[:, -2:-1]
        return T.Tensor(x[:, -1:] + step * np.arange(1, self.horizon + 1)[None, :, None])


def sine_sets(length=900, period=12, input_len=48, horizon=24, slope=0.0, seed=0):
    series = make_synthetic(length, 2, period, slope=slope, seed=seed)
    return split_and_window(series, input_len, horizon)


class TestL1:
    def test_identical(self):
        x = T.tensor(np.random.default_rng(0).normal(size=(3, 4)))
        assert l1_loss(x, x.data).item() == 0.0

    def test_hand_mean(self):
        assert l1_loss(T.tensor([1.0, 2.0]), np.zeros(2)).item() == 1.5

    def test_sign_symmetric(self):
        a, b = np.array([1.0, -3.0, 2.0]), np.array([0.5, 1.0, -1.0])
        assert l1_loss(T.tensor(a), b).item() == l1_loss(T.tensor(b), a).item()


class TestAdam:
    def test_zero_gradient_no_change(self):
        store = ParamStore()
        p = store.add("p", np.array([1.0, -2.0]))
        adam_step(store, AdamState(lr=0.1))
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_is_lr_times_sign(self):
        store = ParamStore()
        p = store.add("p", np.array([0.0, 0.0, 0.0]))
        p.grad[...] = [3.0, -0.2, 1e-3]
        adam_step(store, AdamState(lr=0.1))
        np.testing.assert_allclose(p.data, [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_quadratic_converges(self):
        store = ParamStore()
        p = store.add("x", np.array([0.0]))
        state = AdamState(lr=0.1)
        for _ in range(200):
            store.zero_grad()
            T.backward(((p - 3.0) * (p - 3.0)).sum())
            adam_step(store, state)
        assert abs(p.data[0] - 3.0) < 1e-2

    def test_clip(self):
        store = ParamStore()
        p = store.add("p", np.zeros(2))
        p.grad[...] = [3.0, 4.0]
        assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])


class TestEvaluate:
    def test_perfect_predictor(self):
        ramp = np.arange(300.0)[:, None]
        _, _, test = split_and_window(ramp, 10, 5)
        mse, mae = evaluate(RampModel(5), test)
        assert mse < 1e-20 and mae < 1e-10

    def test_zero_predictor_on_standardized_data(self):
        rng = np.random.default_rng(0)
        train_set, _, _ = split_and_window(rng.normal(3.0, 2.0, size=(5000, 2)), 8, 4)
        mse, _ = evaluate(BiasModel(4, 2), train_set)
        assert mse == pytest.approx(1.0, abs=0.02)

    def test_jensen(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
            mse, mae = error_metrics(a, b)
            assert mse >= mae ** 2

    def test_raw_scale(self):
        rng = np.random.default_rng(2)
        _, _, test = split_and_window(rng.normal(0.0, 10.0, size=(400, 1)), 8, 4)
        norm, _ = evaluate(BiasModel(4, 1), test)
        raw, _ = evaluate(BiasModel(4, 1), test, raw_scale=True)
        assert raw > 10 * norm


class TestBaselines:
    def test_persistence(self):
        x = np.arange(12.0).reshape(1, 6, 2)
        out = persistence_forecast(x, 3)
        assert out.shape == (1, 3, 2) and np.all(out[0] == x[0, -1])

    def test_seasonal_naive(self):
        x = np.arange(8.0)[None, :, None]
        np.testing.assert_array_equal(seasonal_naive_forecast(x, 7, 3)[0, :, 0], [5, 6, 7, 5, 6, 7, 5])


class TestEarlyStopping:
    def run(self, losses, patience, max_epochs):
        train_set, _, _ = split_and_window(np.random.default_rng(0).normal(size=(200, 1)), 4, 2)
        model = BiasModel(2, 1)
        snapshots = []
        seq = iter(losses)

        def validate(m):
            snapshots.append(m.params.state()["w"].copy())
            return next(seq)

        result = train(model, train_set, None, TrainConfig(max_epochs=max_epochs, patience=patience, lr=0.01,
                                                            batch_size=64), validate=validate)
        return result, model, snapshots

    def test_stops_after_patience_and_restores_best(self):
        result, model, snaps = self.run([1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.5, 0.4], patience=4, max_epochs=8)
        assert result.epochs_run == 6 and result.best_epoch == 2 and result.best_valid == 0.9
        np.testing.assert_array_equal(model.w.data, snaps[1])
        assert not np.array_equal(snaps[1], snaps[5])

    def test_patience_beyond_max_epochs(self):
        result, _, _ = self.run([1.0, 1.1, 1.2, 1.3], patience=10, max_epochs=4)
        assert result.epochs_run == 4

    def test_improving_never_stops(self):
        result, _, _ = self.run([1.0, 0.9, 0.8, 0.7, 0.6, 0.5], patience=1, max_epochs=6)
        assert result.epochs_run == 6 and result.best_epoch == 6

    def test_counter_resets_only_on_strict_improvement(self):
        st = TrainState()
        for v, expect in [(1.0, 0), (1.0, 1), (0.5, 0), (0.6, 1)]:
            st.update(v)
            assert st.since_improvement == expect

    def test_bad_patience(self):
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)

    def test_nan_loss_aborts(self):
        train_set, valid_set, _ = split_and_window(np.random.default_rng(0).normal(size=(200, 1)), 4, 2)
        model = BiasModel(2, 1, fill=np.nan)
        with pytest.raises(NumericError, match="epoch 1"):
            train(model, train_set, valid_set, TrainConfig(max_epochs=2))


SMALL = dict(n_features=2, input_len=48, horizon=24, period=12, ma_kernel=13, scale=0.5, d_model=8, n_heads=2,
             d_ff=16, dropout=0.05)


class TestTrainingRuns:
    def test_loss_halves_in_ten_epochs(self):
        train_set, valid_set, _ = sine_sets()
        model = Periodformer(ModelConfig(**SMALL), seed=0)
        result = train(model, train_set, valid_set, TrainConfig(max_epochs=10, patience=10, lr=3e-3))
        losses = [r["train_loss"] for r in result.history]
        assert losses[-1] <= 0.5 * losses[0]

    def test_gate_closed_still_trains(self):
        train_set, valid_set, _ = sine_sets()
        model = Periodformer(ModelConfig(**{**SMALL, "scale": 0.0}), seed=0)
        result = train(model, train_set, valid_set, TrainConfig(max_epochs=5, patience=5, lr=3e-3))
        losses = [r["train_loss"] for r in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_restored_params_reproduce_best_loss(self):
        train_set, valid_set, _ = sine_sets()
        model = Periodformer(ModelConfig(**SMALL), seed=1)
        result = train(model, train_set, valid_set, TrainConfig(max_epochs=4, patience=1, lr=3e-2))
        _, mae = evaluate(model, valid_set, 256)
        assert abs(mae - result.best_valid) < 1e-10

    def test_seeded_runs_are_bit_identical(self):
        train_set, valid_set, _ = sine_sets(length=800)
        states = []
        for _ in range(2):
            model = Periodformer(ModelConfig(**SMALL), seed=2)
            train(model, train_set, valid_set, TrainConfig(max_epochs=2, seed=7, lr=1e-3))
            states.append(model.params.state())
        for k in states[0]:
            assert np.array_equal(states[0][k], states[1][k])

    def test_epoch_records(self):
        train_set, valid_set, _ = sine_sets(length=800)
        seen = []
        train(Periodformer(ModelConfig(**SMALL)), train_set, valid_set, TrainConfig(max_epochs=1), on_epoch=seen.append)
        assert set(seen[0]) == {"epoch", "train_loss", "valid_mse", "valid_mae", "seconds"}
