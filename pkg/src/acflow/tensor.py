"""Dense 64-bit tensors with taped reverse-mode differentiation.

Shapes are limited to rank <= 3 (batch x positions x channels).  Gradients are
tensors built out of the same primitives, so a quantity obtained from an
earlier backward pass -- a vector-Jacobian product, say -- remains
differentiable and can appear inside a training loss.

Ops only record themselves while a :class:`Tape` is active; with no tape open
they evaluate eagerly and keep no graph.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations; creation order is already topological.

    Tapes nest: a tensor created while several tapes are open is recorded on
    all of them, so a sub-tape can be traversed cheaply for a local
    vector-Jacobian product while an enclosing tape still sees the full graph.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def _recording() -> bool:
    return bool(_TAPE_STACK)


class Tensor:
    """Immutable dense array, optionally linked into the active tape(s)."""

    __slots__ = ("data", "parents", "vjp_fns")

    def __init__(self, data, parents=(), vjp_fns=()):
        self.data = np.asarray(data, dtype=np.float64)
        if parents and _recording():
            self.parents = tuple(parents)
            self.vjp_fns = tuple(vjp_fns)
            for tape in _TAPE_STACK:
                tape.nodes.append(self)
        else:
            self.parents = ()
            self.vjp_fns = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # operator sugar -------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _sum_to(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to ``shape`` (differentiably)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    r = tsum(g, axis=axes, keepdims=True) if axes else g
    return reshape(r, shape)


# primitives ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data + b.data,
        (a, b),
        (lambda g: _sum_to(g, a.shape), lambda g: _sum_to(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data - b.data,
        (a, b),
        (lambda g: _sum_to(g, a.shape), lambda g: _sum_to(neg(g), b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, (a,), (lambda g: neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        (
            lambda g: _sum_to(mul(g, b), a.shape),
            lambda g: _sum_to(mul(g, a), b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data / b.data,
        (a, b),
        (
            lambda g: _sum_to(div(g, b), a.shape),
            lambda g: _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return Tensor(
        np.matmul(a.data, b.data),
        (a, b),
        (
            lambda g: _sum_to(matmul(g, transpose_last2(b)), a.shape),
            lambda g: _sum_to(matmul(transpose_last2(a), g), b.shape),
        ),
    )


def transpose_last2(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose_last2 needs rank >= 2")
    return Tensor(
        np.swapaxes(a.data, -1, -2), (a,), (lambda g: transpose_last2(g),)
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return Tensor(a.data.reshape(shape), (a,), (lambda g: reshape(g, a.shape),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return Tensor(
        np.broadcast_to(a.data, shape).copy(), (a,), (lambda g: _sum_to(g, a.shape),)
    )


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            kd_shape = (1,) * a.ndim
        elif keepdims:
            kd_shape = g.shape
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.ndim for ax in axes)
            kd_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
        return broadcast_to(reshape(g, kd_shape), a.shape)

    return Tensor(out_data, (a,), (back,))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return div(tsum(a, axis=axis), float(n))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data), (a,), ())
    out.vjp_fns = (lambda g: mul(g, out),)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), (a,), (lambda g: div(g, a),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    t = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    out = Tensor(data, (a,), ())
    out.vjp_fns = (lambda g: mul(mul(g, out), sub(1.0, out)),)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return Tensor(np.maximum(a.data, 0.0), (a,), (lambda g: mul(g, Tensor(mask)),))


def min0(a) -> Tensor:
    """Elementwise min(x, 0); the negative-part companion of relu."""
    a = as_tensor(a)
    mask = (a.data < 0).astype(np.float64)
    return Tensor(np.minimum(a.data, 0.0), (a,), (lambda g: mul(g, Tensor(mask)),))


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ndim = parts[0].ndim
    ax = axis % ndim
    data = np.concatenate([p.data for p in parts], axis=ax)
    offsets = np.cumsum([0] + [p.shape[ax] for p in parts])

    def make_back(i):
        start, length = int(offsets[i]), parts[i].shape[ax]
        return lambda g: narrow(g, ax, start, length)

    return Tensor(data, tuple(parts), tuple(make_back(i) for i in range(len(parts))))


def narrow(a, axis, start, length) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, start + length)
    after = a.shape[ax] - start - length
    return Tensor(
        a.data[tuple(idx)].copy(),
        (a,),
        (lambda g: pad_axis(g, ax, start, after),),
    )


def pad_axis(a, axis, before, after) -> Tensor:
    a = as_tensor(a)
    ax = axis % a.ndim
    pad = [(0, 0)] * a.ndim
    pad[ax] = (before, after)
    return Tensor(
        np.pad(a.data, pad),
        (a,),
        (lambda g: narrow(g, ax, before, a.shape[ax]),),
    )


# composed operations ------------------------------------------------------

def softmax_rows(logits) -> Tensor:
    """Row-wise softmax over the last axis, stabilized by row-max subtraction."""
    t = as_tensor(logits)
    if t.ndim < 2:
        raise ShapeError("softmax_rows needs rank >= 2")
    if not np.all(np.isfinite(t.data)):
        raise DomainError("softmax_rows: non-finite logits")
    row_max = np.max(t.data, axis=-1, keepdims=True)  # constant shift, grad-neutral
    e = exp(sub(t, Tensor(row_max)))
    return div(e, tsum(e, axis=-1, keepdims=True))


def row_sq_l2(a) -> Tensor:
    """Squared Euclidean norm of each row (reduces the last axis)."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("row_sq_l2 needs rank >= 2")
    return tsum(mul(a, a), axis=-1)


# reverse traversal --------------------------------------------------------

class GradMap:
    """Gradients from one backward traversal, keyed by tensor identity."""

    def __init__(self, grads):
        self._grads = grads

    def of(self, t: Tensor) -> Tensor:
        g = self._grads.get(id(t))
        if g is None:
            return Tensor(np.zeros(t.shape))
        return g


def _backprop(output: Tensor, tape: Tape, seed) -> GradMap:
    grads = {id(output): as_tensor(seed)}
    for node in reversed(tape.nodes[: len(tape.nodes)]):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, fn in zip(node.parents, node.vjp_fns):
            contrib = fn(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else add(prev, contrib)
    return GradMap(grads)


def backward(output: Tensor, tape: Tape) -> GradMap:
    """Reverse-mode pass from a scalar output over one tape."""
    if output.shape != ():
        raise ShapeError(f"backward target must be scalar, got shape {output.shape}")
    return _backprop(output, tape, np.ones(()))


def vjp(v, output: Tensor, tape: Tape, wrt: Tensor | None = None):
    """v^T J of the recorded computation; returns grad of ``wrt`` when given."""
    v = as_tensor(v)
    if v.shape != output.shape:
        raise ShapeError(f"vjp seed shape {v.shape} != output shape {output.shape}")
    grads = _backprop(output, tape, v)
    if wrt is None:
        return grads
    return grads.of(wrt)
