"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded only while a :class:`Tape` is active, so evaluation
outside a tape runs with no bookkeeping. The graph is rebuilt on every
forward pass (define-by-run), which lets probes of different length produce
graphs of different shape.

Forward matrix products are issued as a stack of single-row products rather
than one matrix-matrix call. A plain BLAS gemm may block rows differently for
different batch sizes; a stack of identical per-row calls cannot, so batched
and one-at-a-time predictions agree bit for bit.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rules."""


class Variable:
    """A value in the graph, with an accumulated gradient of the same shape."""

    __slots__ = ("value", "_grad", "trainable", "requires_grad", "name")

    def __init__(self, value, trainable: bool = False, name: str | None = None,
                 requires_grad: bool | None = None):
        self.value = np.array(value, dtype=np.float64)
        self._grad: np.ndarray | None = None
        self.trainable = trainable
        self.requires_grad = trainable if requires_grad is None else requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match value shape {self.value.shape}")
        self._grad = g.copy()

    def zero_grad(self) -> None:
        self._grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"expected a scalar, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, trainable={self.trainable})"

    # Operator sugar; each maps to a recorded primitive.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)


def zero_grads(params: Iterable[Variable]) -> None:
    for p in params:
        p.zero_grad()


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; primitives executed inside the ``with`` block
    are appended to this tape. Tapes are confined to the thread that opened
    them.
    """

    def __init__(self):
        self.records: list[tuple[Variable, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)


_local = threading.local()


def _stack() -> list[Tape]:
    s = getattr(_local, "stack", None)
    if s is None:
        s = _local.stack = []
    return s


def active_tape() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def backward(tape: Tape, loss: Variable) -> None:
    """Accumulate d(loss)/d(value) into every reachable variable's grad."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for out, _ in tape.records:
        out._grad = None
    loss._grad = np.ones_like(loss.value)
    for out, fn in reversed(tape.records):
        if out._grad is not None:
            fn(out._grad)


def _acc(var: Variable, g: np.ndarray) -> None:
    if not var.requires_grad:
        return
    if var._grad is None:
        var._grad = np.array(g, dtype=np.float64)
    else:
        var._grad += g


def _as_var(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _record(out_value: np.ndarray, inputs: Sequence[Variable], fn) -> Variable:
    # out_value is freshly computed, so wrap it without the defensive copy
    out = Variable.__new__(Variable)
    out.value = np.asarray(out_value, dtype=np.float64)
    out._grad = None
    out.trainable = out.requires_grad = False
    out.name = None
    tape = active_tape()
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        tape.records.append((out, fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Variable, b: Variable, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _broadcast_shape(a, b, "add")

    def fn(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _record(a.value + b.value, (a, b), fn)


def sub(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _broadcast_shape(a, b, "sub")

    def fn(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, -_unbroadcast(g, b.shape))

    return _record(a.value - b.value, (a, b), fn)


def mul(a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    _broadcast_shape(a, b, "mul")

    def fn(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.value, b.shape))

    return _record(a.value * b.value, (a, b), fn)


def power(x, p: float) -> Variable:
    """Elementwise ``x ** p`` for a fixed real exponent."""
    x = _as_var(x)
    p = float(p)

    def fn(g):
        _acc(x, g * p * x.value ** (p - 1.0))

    return _record(x.value ** p, (x,), fn)


def matmul(x, w) -> Variable:
    """Apply matrix ``w`` (out x in) to the last axis of ``x`` (..., in)."""
    x, w = _as_var(x), _as_var(w)
    if w.value.ndim != 2 or x.value.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"matmul: cannot apply matrix of shape {w.shape} to input of shape {x.shape}")
    # one (1, in) @ (in, out) product per row: row results independent of batch size
    xv = np.ascontiguousarray(x.value)
    out = np.matmul(xv.reshape(-1, 1, xv.shape[-1]), w.value.T).reshape(xv.shape[:-1] + (w.shape[0],))

    def fn(g):
        if x.requires_grad:
            _acc(x, g @ w.value)
        if w.requires_grad:
            _acc(w, g.reshape(-1, w.shape[0]).T @ x.value.reshape(-1, w.shape[1]))

    return _record(out, (x, w), fn)


def sigmoid(x) -> Variable:
    x = _as_var(x)
    # tanh form avoids overflow in exp for large |x|
    s = (0.5 * (np.tanh(0.5 * np.ascontiguousarray(x.value)) + 1.0)).reshape(x.shape)

    def fn(g):
        _acc(x, g * s * (1.0 - s))

    return _record(s, (x,), fn)


def tanh(x) -> Variable:
    x = _as_var(x)
    t = np.tanh(np.ascontiguousarray(x.value)).reshape(x.shape)

    def fn(g):
        _acc(x, g * (1.0 - t * t))

    return _record(t, (x,), fn)


def relu(x) -> Variable:
    x = _as_var(x)
    mask = x.value > 0  # subgradient 0 at the kink

    def fn(g):
        _acc(x, g * mask)

    return _record(np.where(mask, x.value, 0.0), (x,), fn)


def max_axis(x, axis: int = -1) -> Variable:
    """Maximum along ``axis``; ties route the gradient to the first maximum."""
    x = _as_var(x)
    axis = axis % x.value.ndim
    if x.shape[axis] == 0:
        raise ShapeError(f"max_axis: empty axis {axis} in shape {x.shape}")
    idx = np.expand_dims(np.argmax(x.value, axis=axis), axis)
    out = np.take_along_axis(x.value, idx, axis=axis).squeeze(axis)

    def fn(g):
        full = np.zeros_like(x.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _acc(x, full)

    return _record(out, (x,), fn)


def sum(x, axis: int | None = None) -> Variable:  # noqa: A001 - mirrors numpy
    x = _as_var(x)
    out = x.value.sum(axis=axis)

    def fn(g):
        if axis is None:
            _acc(x, np.broadcast_to(g, x.shape))
        else:
            _acc(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _record(out, (x,), fn)


def getitem(x, index) -> Variable:
    """Basic (slice/integer) indexing; advanced indexing is not supported."""
    x = _as_var(x)
    if not isinstance(index, tuple):
        index = (index,)
    for part in index:
        if not (part is Ellipsis or part is None or isinstance(part, (slice, int, np.integer))):
            raise TypeError(f"getitem supports only basic indexing, got {type(part).__name__}")
    out = x.value[index]

    def fn(g):
        if not x.requires_grad:
            return
        if x._grad is None:
            x._grad = np.zeros_like(x.value)
        x._grad[index] += g

    return _record(np.array(out), (x,), fn)


def concat(xs: Sequence, axis: int = 0) -> Variable:
    xs = [_as_var(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} along axis {axis}") from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def fn(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                _acc(x, np.take(g, np.arange(lo, hi), axis=axis))

    return _record(out, xs, fn)


def stack(xs: Sequence, axis: int = 0) -> Variable:
    xs = [_as_var(x) for x in xs]
    try:
        out = np.stack([x.value for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: shapes differ {[x.shape for x in xs]}") from None

    def fn(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                _acc(x, np.take(g, i, axis=axis))

    return _record(out, xs, fn)


def reshape(x, shape: tuple[int, ...]) -> Variable:
    x = _as_var(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None

    def fn(g):
        _acc(x, g.reshape(x.shape))

    return _record(out, (x,), fn)


def transpose(x, axes: tuple[int, ...] | None = None) -> Variable:
    x = _as_var(x)
    view = np.transpose(x.value, axes)
    out = np.ascontiguousarray(view).reshape(view.shape)  # keeps 0-d inputs 0-d
    inverse = None if axes is None else tuple(np.argsort(axes))

    def fn(g):
        _acc(x, np.transpose(g, inverse))

    return _record(out, (x,), fn)


def windows(x, width: int, pad_left: int = 0, pad_right: int = 0) -> Variable:
    """Unfold sliding windows over the last axis.

    ``x`` has shape (..., C, L). The result has shape (..., T, C*width) where
    row t holds the zero-padded input columns t .. t+width-1, flattened
    channel-major. ``T = L + pad_left + pad_right - width + 1``.
    """
    x = _as_var(x)
    if x.value.ndim < 2:
        raise ShapeError(f"windows: need (..., channels, length), got {x.shape}")
    *lead, C, L = x.shape
    padded_len = L + pad_left + pad_right
    T = padded_len - width + 1
    if width < 1 or T < 1:
        raise ShapeError(f"windows: width {width} does not fit padded length {padded_len}")
    xp = x.value
    if pad_left or pad_right:
        xp = np.pad(xp, [(0, 0)] * len(lead) + [(0, 0), (pad_left, pad_right)])
    view = np.lib.stride_tricks.sliding_window_view(xp, width, axis=-1)  # (..., C, T, width)
    out = np.ascontiguousarray(np.moveaxis(view, -2, -3)).reshape(*lead, T, C * width)

    def fn(g):
        g = g.reshape(*lead, T, C, width)
        gp = np.zeros(tuple(lead) + (C, padded_len))
        for j in range(width):
            gp[..., :, j:j + T] += np.swapaxes(g[..., j], -1, -2)
        _acc(x, gp[..., pad_left:pad_left + L])

    return _record(out, (x,), fn)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[], Variable], params: Sequence[Variable], step: float = 1e-5) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    ``fn`` must rebuild the scalar loss from the current parameter values and
    be deterministic. The error of one entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    zero_grads(params)
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, err)
    return worst
