"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op appends its output to a thread-local tape when at
least one input requires a gradient. :func:`backward` walks the tape in
reverse creation order, accumulates gradients into leaf tensors and clears
the tape.

Any op producing NaN or Inf raises :class:`NonFiniteError` naming the op.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "tensor",
    "no_grad",
    "clear_tape",
    "tape_size",
    "backward",
    "forward_op",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "tanh",
    "relu",
    "leaky_relu",
    "elu",
    "exp",
    "log",
    "power",
    "softmax",
    "softmax_lastdim",
    "sum_axis",
    "mean_axis",
    "concat",
    "stack",
    "slice_",
    "transpose",
    "reshape",
    "finite_difference_grad",
    "grad_rel_error",
]


class ShapeError(ValueError):
    """Operand extents are incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """A forward value became NaN or infinite."""


class TapeError(RuntimeError):
    """backward() was called in a state where it cannot run."""


class _TapeState(threading.local):
    def __init__(self) -> None:
        self.nodes: list[Tensor] = []
        self.enabled = True


_tape = _TapeState()


@contextmanager
def no_grad():
    """Disable recording for the enclosed block (inference mode)."""
    prev = _tape.enabled
    _tape.enabled = False
    try:
        yield
    finally:
        _tape.enabled = prev


def clear_tape() -> None:
    _tape.nodes.clear()


def tape_size() -> int:
    return len(_tape.nodes)


class Tensor:
    """A real-valued array that can take part in differentiation.

    ``data`` is always a float64 ndarray. ``grad`` is ``None`` until a
    backward pass reaches the tensor and then has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: forward produced non-finite values")
    out = Tensor(data)
    if _tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward_fn
        _tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast extents {a.shape} and {b.shape}") from None


# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finish("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finish("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finish("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _finish("div", out, (a, b), bw)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need at least 2 axes, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: contraction extents differ, {a.shape} @ {b.shape} "
            f"({a.shape[-1]} != {b.shape[-2]})"
        )
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents {a.shape[:-2]} and {b.shape[:-2]} do not broadcast") from None

    if b.ndim == 2:
        # shared weight: contract all leading axes in one GEMM
        K, M = b.shape
        out = (a.data.reshape(-1, K) @ b.data).reshape(*a.shape[:-1], M)

        def bw(g):
            g2 = g.reshape(-1, M)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a.data.reshape(-1, K).T @ g2 if b.requires_grad else None
            return ga, gb

        return _finish("matmul", out, (a, b), bw)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _finish("matmul", a.data @ b.data, (a, b), bw)


# elementwise unary ops


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _finish("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _finish("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope)
    return _finish("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = _as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    mask = x.data > 0
    out = np.where(mask, x.data, neg)
    return _finish("elu", out, (x,), lambda g: (g * np.where(mask, 1.0, neg + alpha),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _finish("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _finish("log", out, (x,), lambda g: (g / x.data,))


def power(x, exponent: float) -> Tensor:
    x = _as_tensor(x)
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x.data**p

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * p * x.data ** (p - 1.0),)

    return _finish("power", out, (x,), bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", out, (x,), bw)


def softmax_lastdim(x) -> Tensor:
    return softmax(x, axis=-1)


# reductions and structural ops


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish("sum", np.asarray(out), (x,), bw)


def mean_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _finish("mean", np.asarray(out), (x,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeError(
                f"concat: extents {[t.shape for t in ts]} disagree off axis {axis}"
            )
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _finish("concat", np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    expanded = []
    for t in ts:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice, type(None), type(Ellipsis))) for k in parts)


def slice_(x, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    x = _as_tensor(x)
    try:
        out = x.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc} for extents {x.shape}") from None
    basic = _is_basic_index(key)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _finish("slice", np.array(out, dtype=np.float64), (x,), bw)


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for extents {x.shape}")
    inv = tuple(np.argsort(axes))
    return _finish("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view extents {x.shape} as {tuple(shape)}") from None
    return _finish("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


_OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "elu": elu,
    "exp": exp,
    "log": log,
    "power": power,
    "softmax_lastdim": softmax_lastdim,
    "softmax": softmax,
    "sum_axis": sum_axis,
    "mean_axis": mean_axis,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "stack": lambda *ts, axis=0: stack(ts, axis=axis),
    "slice": slice_,
    "transpose": transpose,
    "reshape": reshape,
}


def forward_op(op_kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Dispatch an op by name, e.g. ``forward_op("matmul", [a, b])``."""
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise TapeError(f"backward: loss must be scalar-shaped, got extents {loss.shape}")
    if loss._backward is None:
        if loss.requires_grad:
            # loss is itself a leaf
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise TapeError("backward: loss was not produced by a recorded forward pass")
    if not _tape.nodes:
        raise TapeError("backward: tape is empty")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(_tape.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                if parent._backward is None:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg
    finally:
        _tape.nodes.clear()


def finite_difference_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` with respect to ``x``.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` (e.g. a model parameter) instead of using its argument.
    """
    if h <= 0:
        raise ValueError("h must be positive")

    def value() -> float:
        with no_grad():
            out = f(x)
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    flat = x.data.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = value()
        flat[i] = orig - h
        down = value()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray, zero_tol: float = 1e-7) -> float:
    """Norm-wise relative error, symmetric in its arguments.

    When both gradients are below ``zero_tol`` in norm (a parameter the loss
    does not depend on to first order) the absolute difference is returned.
    """
    diff = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < zero_tol:
        return diff
    return diff / float(scale)
