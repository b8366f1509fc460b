"""Dense float64 tensor with tape-based reverse-mode differentiation.

Only the operations the forecasting model needs are provided.  Every
operation that touches a tensor with ``requires_grad`` records its inputs and
a backward rule on the output tensor; :func:`backward` linearizes those
records into a :class:`GradTape` and replays it in reverse.

Leaf tensors created with ``requires_grad=True`` carry a zero-initialized
``grad`` buffer.  Gradients accumulate across uses and across calls to
:func:`backward`; call :meth:`Tensor.zero_grad` between optimizer steps.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "tensor",
    "parameter",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "matmul",
    "softmax",
    "conv1d",
    "pad",
    "window_mean",
    "concat",
    "activation",
    "dropout",
    "ACTIVATIONS",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable operation recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data) -> np.ndarray:
    # row-major always: BLAS may round differently for other layouts
    return np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
        else np.ascontiguousarray(data, dtype=np.float64)


class Tensor:
    """N-dimensional float64 array that can take part in differentiation.

    Parameters
    ----------
    data : array_like
        Values, converted to a row-major float64 array.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        # (inputs, backward rule, op name) for non-leaf tensors
        self._ctx: tuple[tuple["Tensor", ...], Callable, str] | None = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, inputs: Sequence["Tensor"], rule: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        needs = is_grad_enabled() and any(t.requires_grad for t in inputs)
        out.requires_grad = needs
        out.grad = None
        out._ctx = (tuple(inputs), rule, op) if needs else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- reductions and data movement ----------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def abs(self) -> "Tensor":
        return tabs(self)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- tape ---------------------------------------------------------------------
@dataclass
class TapeEntry:
    output: Tensor
    inputs: tuple[Tensor, ...]
    rule: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class GradTape:
    """Topologically ordered record of the operations that produced a tensor.

    Entries appear after the entries that produced their inputs, so replaying
    the rules in reverse visits each output before any of its inputs.
    """

    def __init__(self, entries: list[TapeEntry]):
        self.entries = entries

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        entries: list[TapeEntry] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if node._ctx is None:
                continue
            if expanded:
                inputs, rule, op = node._ctx
                entries.append(TapeEntry(node, inputs, rule, op))
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._ctx[0]:
                if parent._ctx is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): seed}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            for inp, gi in zip(entry.inputs, entry.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._ctx is None:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        # the root itself may be a leaf
        if root._ctx is None and root.requires_grad and id(root) in grads:
            root.grad += grads[id(root)]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable ``requires_grad`` leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data)
    if loss._ctx is None:
        loss.grad += seed
        return
    GradTape.record(loss).replay(loss, seed)


# -- elementwise ----------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    if np.isscalar(b):
        c = float(b)
        a = _lift(a)
        return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")
    a, b = _lift(a), _lift(b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), rule, "mul")


def tabs(x: Tensor) -> Tensor:
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def _gelu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cdf = 0.5 * (1.0 + erf(a / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
    return a * cdf, cdf + a * pdf


def _tanh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.tanh(a)
    return y, 1.0 - y * y


def _relu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(a, 0.0), (a > 0).astype(np.float64)


ACTIVATIONS = ("identity", "tanh", "gelu", "relu")
_ACT_FUNCS = {"tanh": _tanh, "gelu": _gelu, "relu": _relu}


def activation(x: Tensor, name: str = "gelu") -> Tensor:
    """Apply a named pointwise activation (identity, tanh, gelu or relu)."""
    if name == "identity":
        return x
    try:
        fn = _ACT_FUNCS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {ACTIVATIONS}") from None
    y, dy = fn(x.data)
    return Tensor._make(y, (x,), lambda g: (g * dy,), name)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


# -- reductions -------------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._make(np.asarray(out, dtype=np.float64), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axes, keepdims), 1.0 / count)


# -- data movement ----------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._make(out, (x,), lambda g: (g.transpose(inverse),), "permute")


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index], dtype=np.float64)

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._make(out, (x,), rule, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, tuple(tensors), rule, "concat")


def _pad_np(a: np.ndarray, before: int, after: int, mode: str, axis: int) -> np.ndarray:
    if before == 0 and after == 0:
        return a
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    if mode == "replicate":
        return np.pad(a, widths, mode="edge")
    if mode == "zero":
        return np.pad(a, widths, mode="constant")
    raise ConfigError(f"unknown padding mode {mode!r}; use 'replicate' or 'zero'")


def _unpad_grad(g: np.ndarray, before: int, after: int, mode: str, axis: int) -> np.ndarray:
    n = g.shape[axis] - before - after
    core = np.take(g, np.arange(before, before + n), axis=axis)
    if mode == "replicate":
        core = core.copy()
        head = [slice(None)] * g.ndim
        if before:
            head[axis] = slice(0, before)
            first = [slice(None)] * g.ndim
            first[axis] = slice(0, 1)
            core[tuple(first)] += g[tuple(head)].sum(axis=axis, keepdims=True)
        if after:
            head[axis] = slice(before + n, None)
            last = [slice(None)] * g.ndim
            last[axis] = slice(n - 1, n)
            core[tuple(last)] += g[tuple(head)].sum(axis=axis, keepdims=True)
    return core


def pad(x: Tensor, before: int, after: int, mode: str = "replicate", axis: int = -2) -> Tensor:
    """Pad ``x`` along ``axis`` by edge replication or zeros."""
    axis = axis % x.ndim
    out = _pad_np(x.data, before, after, mode, axis)
    return Tensor._make(out, (x,), lambda g: (_unpad_grad(g, before, after, mode, axis),), "pad")


def _window_sum(a: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Sums of every length-``k`` window along ``axis`` (valid mode)."""
    c = np.cumsum(a, axis=axis)
    zero_shape = list(a.shape)
    zero_shape[axis] = 1
    c = np.concatenate([np.zeros(zero_shape), c], axis=axis)
    n = a.shape[axis]
    hi = np.take(c, np.arange(k, n + 1), axis=axis)
    lo = np.take(c, np.arange(0, n + 1 - k), axis=axis)
    return hi - lo


def window_mean(x: Tensor, k: int, axis: int = -2) -> Tensor:
    """Mean over each length-``k`` window along ``axis`` without padding.

    The output is ``k - 1`` steps shorter than the input.
    """
    axis = axis % x.ndim
    n = x.shape[axis]
    if k < 1 or k > n:
        raise ShapeError(f"window {k} does not fit axis of length {n}")
    out = _window_sum(x.data, k, axis) / k

    def rule(g):
        return (_window_sum(_pad_np(g, k - 1, k - 1, "zero", axis), k, axis) / k,)

    return Tensor._make(out, (x,), rule, "window_mean")


# -- linear algebra ---------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot broadcast shapes {a.shape} and {b.shape}") from exc

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), rule, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), rule, "softmax")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: str = "replicate") -> Tensor:
    """Stride-1, same-length convolution over the time axis.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(..., length, d_in)``.
    weight : Tensor
        Kernel of shape ``(kernel, d_in, d_out)``; ``kernel`` must be odd.
    bias : Tensor, optional
        Shape ``(d_out,)``.
    padding : {'replicate', 'zero'}
        How the ``(kernel - 1) / 2`` boundary steps on each side are filled.
    """
    kernel, d_in, d_out = weight.shape
    if kernel % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {kernel}")
    if x.shape[-1] != d_in:
        raise ShapeError(f"conv1d: input shape {x.shape} does not match weight shape {weight.shape}")
    half = (kernel - 1) // 2
    length = x.shape[-2]
    axis = x.ndim - 2
    xp = _pad_np(x.data, half, half, padding, axis)
    cols = np.stack([xp[..., j:j + length, :] for j in range(kernel)], axis=-2)
    cols = cols.reshape(*x.shape[:-1], kernel * d_in)
    w2 = weight.data.reshape(kernel * d_in, d_out)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def rule(g):
        grads = []
        if x.requires_grad:
            dcols = (g @ w2.T).reshape(*x.shape[:-1], kernel, d_in)
            dxp = np.zeros_like(xp)
            for j in range(kernel):
                dxp[..., j:j + length, :] += dcols[..., j, :]
            grads.append(_unpad_grad(dxp, half, half, padding, axis))
        else:
            grads.append(None)
        if weight.requires_grad:
            dw = cols.reshape(-1, kernel * d_in).T @ g.reshape(-1, d_out)
            grads.append(dw.reshape(weight.shape))
        else:
            grads.append(None)
        if bias is not None:
            grads.append(g.reshape(-1, d_out).sum(axis=0) if bias.requires_grad else None)
        return grads

    return Tensor._make(out, inputs, rule, "conv1d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def stack_params(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params])
