import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from periodcast import tensor as T
from periodcast.errors import ConfigError, ShapeError
from periodcast.gradcheck import numerical_grad, rel_error


def check_grads(build, arrays_, h=1e-5):
    """Compare analytic and finite-difference gradients of sum-like scalar ``build``."""
    leaves = [T.parameter(a) for a in arrays_]
    loss = build(*leaves)
    T.backward(loss)
    errs = []
    for leaf in leaves:
        def f():
            with T.no_grad():
                return build(*leaves).item()
        num = numerical_grad(f, leaf.data, h)
        errs.append(rel_error(leaf.grad, num))
    return max(errs)


def weighted(out, seed=0):
    # random projection so every output element contributes differently
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * T.Tensor(w)).sum()


class TestMatmul:
    def test_identity(self):
        out = T.matmul(T.tensor([[1, 0], [0, 1]]), T.tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_dot(self):
        out = T.matmul(T.tensor([[1, 2]]), T.tensor([[3], [4]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))

    def test_gradient_of_sum(self):
        rng = np.random.default_rng(1)
        err = check_grads(lambda a, b: T.matmul(a, b).sum(), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
        assert err < 1e-6

    def test_batched_broadcast_gradient(self):
        rng = np.random.default_rng(2)
        err = check_grads(lambda a, b: weighted(T.matmul(a, b)),
                          [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))])
        assert err < 1e-6


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(T.tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_no_overflow(self):
        out = T.softmax(T.tensor([1000.0, 1000.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(T.softmax(T.tensor([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        y = T.softmax(T.tensor(x), axis=-1).data
        assert np.all((y > 0) & (y <= 1))
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)


class TestConv1d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        w = np.eye(3)[None]
        np.testing.assert_array_equal(T.conv1d(T.tensor(x), T.tensor(w)).data, x)

    def test_ones_kernel_zero_padding(self):
        out = T.conv1d(T.tensor([[1.0], [2.0], [3.0]]), T.tensor(np.ones((3, 1, 1))), padding="zero")
        np.testing.assert_array_equal(out.data[:, 0], [3.0, 6.0, 5.0])

    def test_matches_sliding_window_oracle(self):
        rng = np.random.default_rng(3)
        x, w = rng.normal(size=(7, 2)), rng.normal(size=(5, 2, 3))
        xp = np.pad(x, ((2, 2), (0, 0)), mode="edge")
        expect = np.array([sum(xp[t + j] @ w[j] for j in range(5)) for t in range(7)])
        np.testing.assert_allclose(T.conv1d(T.tensor(x), T.tensor(w)).data, expect, atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            T.conv1d(T.tensor(np.ones((4, 1))), T.tensor(np.ones((2, 1, 1))))

    @pytest.mark.parametrize("padding", ["replicate", "zero"])
    def test_gradient(self, padding):
        rng = np.random.default_rng(4)
        err = check_grads(lambda x, w, b: weighted(T.conv1d(x, w, b, padding=padding)),
                          [rng.normal(size=(8, 2)), rng.normal(size=(3, 2, 2)), rng.normal(size=(2,))])
        assert err < 1e-5


class TestBackward:
    def test_non_scalar_rejected(self):
        x = T.parameter(np.ones(3))
        with pytest.raises(ShapeError):
            T.backward(x * 2.0)

    def test_reuse_accumulates(self):
        x = T.parameter([1.5, -2.0])
        T.backward((x + x).sum())
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_unreachable_leaf_has_zero_grad(self):
        x, y = T.parameter([1.0]), T.parameter([2.0])
        T.backward((x * 3.0).sum())
        np.testing.assert_array_equal(y.grad, [0.0])
        np.testing.assert_array_equal(x.grad, [3.0])

    def test_tape_is_topological(self):
        x = T.parameter(np.ones((2, 2)))
        y = T.matmul(x, x) + x
        tape = T.GradTape.record(y.sum())
        produced = set()
        for entry in tape.entries:
            for inp in entry.inputs:
                assert inp.is_leaf or id(inp) in produced
            produced.add(id(entry.output))

    def test_no_grad_records_nothing(self):
        x = T.parameter([1.0])
        with T.no_grad():
            y = x * 2.0
        assert y.is_leaf and not y.requires_grad


class TestElementwise:
    def test_permute_round_trip_is_exact(self):
        x = np.random.default_rng(5).normal(size=(2, 3, 4))
        y = T.tensor(x).permute(2, 0, 1).permute(1, 2, 0)
        assert np.array_equal(y.data, x)

    def test_reshape_round_trip_is_exact(self):
        x = np.random.default_rng(6).normal(size=(2, 3, 4))
        assert np.array_equal(T.tensor(x).reshape(4, 6).reshape(2, 3, 4).data, x)

    def test_mean(self):
        assert T.tensor([2.0, 4.0, 6.0]).mean().item() == 4.0

    def test_identity_activation(self):
        v = T.tensor([1.0, -2.0])
        assert T.activation(v, "identity") is v

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            T.activation(T.tensor([1.0]), "swish")


# every differentiable op, 20 random small instances each
OPS = {
    "add": (lambda a, b: weighted(a + b), [(3, 4), (4,)]),
    "sub": (lambda a, b: weighted(a - b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: weighted(a * b), [(3, 4), (3, 4)]),
    "scale": (lambda a: weighted(a * 2.5), [(3, 4)]),
    "mean": (lambda a: weighted(a.mean(axis=1)), [(3, 4)]),
    "sum_keepdims": (lambda a: weighted(a.sum(axis=0, keepdims=True)), [(3, 4)]),
    "tanh": (lambda a: weighted(T.activation(a, "tanh")), [(3, 4)]),
    "gelu": (lambda a: weighted(T.activation(a, "gelu")), [(3, 4)]),
    "abs": (lambda a: weighted(a.abs()), [(3, 4)]),
    "permute": (lambda a: weighted(a.permute(2, 0, 1)), [(2, 3, 4)]),
    "reshape": (lambda a: weighted(a.reshape(6, 4)), [(2, 3, 4)]),
    "getitem": (lambda a: weighted(a[:, 1:3]), [(3, 4)]),
    "concat": (lambda a, b: weighted(T.concat([a, b], axis=0)), [(2, 3), (1, 3)]),
    "softmax": (lambda a: weighted(T.softmax(a, axis=-1)), [(3, 4)]),
    "matmul": (lambda a, b: weighted(T.matmul(a, b)), [(3, 4), (4, 2)]),
    "pad_replicate": (lambda a: weighted(T.pad(a, 2, 3, "replicate")), [(4, 2)]),
    "pad_zero": (lambda a: weighted(T.pad(a, 1, 0, "zero")), [(4, 2)]),
    "window_mean": (lambda a: weighted(T.window_mean(a, 3)), [(6, 2)]),
    "conv1d": (lambda a, w: weighted(T.conv1d(a, w)), [(5, 2), (3, 2, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradients_match_finite_differences(name):
    build, shapes = OPS[name]
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        arrays_ = [rng.normal(size=s) for s in shapes]
        if name == "abs":
            arrays_ = [a + np.sign(a) * 0.1 for a in arrays_]  # keep away from the kink
        assert check_grads(build, arrays_) < 1e-4, name
