"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values live in row-major numpy arrays. Differentiable primitives record a
backward closure on the tape of their inputs; a tensor whose ``tape`` is
``None`` is a constant and receives no gradient. ``backward`` replays the
record in reverse, which is a valid topological order because ops are
appended as they execute.

Only the operations the encoder, backbone, and losses need are provided.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..errors import ArgumentError, ShapeError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Execution-ordered record of differentiable primitive applications.

    A tape is single-use and confined to one logical thread: run a forward
    pass with parameters bound to it, call :func:`backward` once, discard.
    """

    __slots__ = ("_records",)

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, Callable[[Array], None]]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: "Tensor", backward_fn: Callable[[Array], None]) -> None:
        self._records.append((out, backward_fn))

    @property
    def output(self) -> "Tensor | None":
        """The most recently recorded node (the loss, in normal use)."""
        return self._records[-1][0] if self._records else None


class Tensor:
    """A dense float64 array plus the bookkeeping needed for backprop.

    ``grad`` accumulates additively across fan-out during ``backward`` and
    stays ``None`` for nodes the seed never reaches.
    """

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Tape | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    # operator sugar; all dispatch to the module-level primitives
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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ArgumentError("division only supported by a plain scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ArgumentError("inputs belong to different tapes")
    return tape


def _make(data: Array, tape: Tape | None, backward_fn: Callable[[Array], None]) -> Tensor:
    out = Tensor(data, tape)
    if tape is not None:
        tape.record(out, backward_fn)
    return out


def _accum(t: Tensor, g: Array) -> None:
    if t.tape is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(tape: Tape, seed, out: Tensor | None = None) -> None:
    """Replay ``tape`` in reverse, accumulating grads into every node.

    ``seed`` must match the shape of ``out`` (by default the last recorded
    node). Leaves never reached keep ``grad is None``; callers treat that
    as zero.
    """
    if out is None:
        out = tape.output
    if out is None:
        return
    seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=np.float64)
    if seed_arr.shape != out.data.shape:
        raise ShapeError(f"seed shape {seed_arr.shape} != output shape {out.data.shape}")
    out.grad = seed_arr.copy()
    for node, fn in reversed(tape._records):
        if node.grad is not None:
            fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)

    def fn(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, tape, fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)

    def fn(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, tape, fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data

    def fn(g: Array) -> None:
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _make(ad * bd, tape, fn)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def fn(g: Array) -> None:
        _accum(a, g * data)

    return _make(data, a.tape, fn)


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    ad = a.data

    def fn(g: Array) -> None:
        _accum(a, g / ad)

    return _make(np.log(ad), a.tape, fn)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def fn(g: Array) -> None:
        _accum(a, g * data * (1.0 - data))

    return _make(data, a.tape, fn)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), the gated activation used inside perceptrons."""
    return mul(a, sigmoid(a))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape

    def fn(g: Array) -> None:
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), a.tape, fn)


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def fn(g: Array) -> None:
        _accum(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), a.tape, fn)


def swap_last2(a: Tensor) -> Tensor:
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def fn(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), a.tape, fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    tape = _tape_of(*tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def fn(g: Array) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tape, fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = (slice(None),) * axis + (slice(start, stop),)
    shape = a.data.shape

    def fn(g: Array) -> None:
        full = np.zeros(shape)
        full[idx] = g
        _accum(a, full)

    return _make(a.data[idx].copy(), a.tape, fn)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def fn(g: Array) -> None:
        if axis is None:
            _accum(a, np.full(shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), a.tape, fn)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def fn(g: Array) -> None:
        if axis is None:
            _accum(a, np.full(shape, g / count))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / count, shape).copy())

    return _make(a.data.mean(axis=axis, keepdims=keepdims), a.tape, fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all entries."""
    d = sub(a, b)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supports plain 2-D x 2-D, a stacked left operand against a 2-D weight
    (``(..., m, k) @ (k, n)``), and batched products where both operands
    carry identical leading dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"inner extents disagree: {ad.shape} @ {bd.shape}")
    tape = _tape_of(a, b)

    if bd.ndim == 2:
        def fn(g: Array) -> None:
            _accum(a, g @ bd.T)
            k, n = bd.shape
            _accum(b, ad.reshape(-1, k).T @ g.reshape(-1, n))

        return _make(ad @ bd, tape, fn)

    if ad.shape[:-2] == bd.shape[:-2]:
        def fn(g: Array) -> None:
            _accum(a, g @ np.swapaxes(bd, -1, -2))
            _accum(b, np.swapaxes(ad, -1, -2) @ g)

        return _make(ad @ bd, tape, fn)

    raise ShapeError(f"unsupported matmul shapes: {ad.shape} @ {bd.shape}")


def take_rows(w: Tensor, ids) -> Tensor:
    """Row lookup ``w[ids]``; the gradient scatter-adds into the rows."""
    w = as_tensor(w)
    idx = np.asarray(ids, dtype=np.int64)
    shape = w.data.shape

    def fn(g: Array) -> None:
        gw = np.zeros(shape)
        np.add.at(gw, idx, g)
        _accum(w, gw)

    return _make(w.data[idx].copy(), w.tape, fn)


# ---------------------------------------------------------------------------
# fused normalization / attention building blocks


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; invariant to additive shifts."""
    a = as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[-1] == 0:
        raise ArgumentError("softmax needs a non-empty last axis")
    if not np.all(np.isfinite(a.data)):
        raise ArgumentError("softmax input must be finite")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def fn(g: Array) -> None:
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - inner))

    return _make(data, a.tape, fn)


def rmsnorm(x: Tensor, gain: Tensor, eps: float = 1e-8) -> Tensor:
    """``gain * x / sqrt(mean(x^2, last axis) + eps)``."""
    x, gain = as_tensor(x), as_tensor(gain)
    d = x.data.shape[-1]
    if gain.data.shape != (d,):
        raise ShapeError(f"gain shape {gain.data.shape} != ({d},)")
    tape = _tape_of(x, gain)
    xd, gd = x.data, gain.data
    r = 1.0 / np.sqrt((xd * xd).mean(axis=-1, keepdims=True) + eps)
    data = gd * xd * r

    def fn(g: Array) -> None:
        ug = g * gd
        inner = (ug * xd).sum(axis=-1, keepdims=True)
        _accum(x, r * ug - xd * (r ** 3 / d) * inner)
        ggain = g * xd * r
        _accum(gain, ggain.reshape(-1, d).sum(axis=0))

    return _make(data, tape, fn)


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int = 1) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    Accepts ``(s, d)`` or ``(B, s, d)`` operands; every output row is a
    convex combination of rows of ``v``. Scores are scaled by
    ``1/sqrt(head_width)``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    squeeze = q.ndim == 2
    if squeeze:
        q, k, v = (reshape(t, (1,) + t.shape) for t in (q, k, v))
    if k.shape[-2] == 0:
        raise ArgumentError("attention needs at least one key token")
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    if n_heads > 1:
        b, s, _ = q.shape
        sk = k.shape[-2]
        dh = d // n_heads
        qh = transpose(reshape(q, (b, s, n_heads, dh)), (0, 2, 1, 3))
        kh = transpose(reshape(k, (b, sk, n_heads, dh)), (0, 2, 1, 3))
        vh = transpose(reshape(v, (b, sk, n_heads, dh)), (0, 2, 1, 3))
        scores = mul(matmul(qh, swap_last2(kh)), 1.0 / math.sqrt(dh))
        mix = matmul(softmax(scores), vh)
        out = reshape(transpose(mix, (0, 2, 1, 3)), (b, s, d))
    else:
        scores = mul(matmul(q, swap_last2(k)), 1.0 / math.sqrt(d))
        out = matmul(softmax(scores), v)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out
