"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every primitive builds a new :class:`Tensor` whose ``_backward`` closure
knows how to push the output gradient back into its parents. Gradients
accumulate with ``+=`` so fan-out is handled naturally; callers zero them
explicitly between steps with :func:`zero_grads`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class GraphError(RuntimeError):
    """Raised on misuse of the computation graph (non-scalar or repeated backward)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _check_finite(kind: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.isfinite(t.data).all():
            raise FloatingPointError(f"{kind}: non-finite value in input of shape {t.shape}")


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


def make_node(
    kind: str,
    out: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], None],
) -> Tensor:
    """Wrap a forward result, recording a graph edge only if some parent needs grads.

    ``backward_fn`` receives the output gradient and must call
    ``parent._accumulate`` for each parent with ``requires_grad``.
    """
    needs = any(p.requires_grad for p in parents)
    t = Tensor(out, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=kind)
    if needs:
        t._backward = backward_fn
    return t


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    _check_finite("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return make_node("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    _check_finite("sub", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return make_node("sub", a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    _check_finite("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return make_node("mul", a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Scalar times tensor, the only broadcast the engine supports."""
    _check_finite("scale", a)
    if not np.isfinite(c):
        raise FloatingPointError(f"scale: non-finite factor {c}")

    def bw(g):
        a._accumulate(c * g)

    return make_node("scale", c * a.data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    _check_finite("sigmoid", a)
    out = _sigmoid(a.data)

    def bw(g):
        a._accumulate(g * out * (1.0 - out))

    return make_node("sigmoid", out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    _check_finite("tanh", a)
    out = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - out * out))

    return make_node("tanh", out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    _check_finite("relu", a)
    pos = a.data > 0

    def bw(g):
        a._accumulate(g * pos)

    return make_node("relu", np.where(pos, a.data, 0.0), (a,), bw)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    _check_finite("abs", a)
    sign = np.sign(a.data)

    def bw(g):
        a._accumulate(g * sign)

    return make_node("abs", np.abs(a.data), (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# linear algebra and reshaping
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    _check_finite("matmul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return make_node("matmul", a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected 2-D tensor, got shape {a.shape}")

    def bw(g):
        a._accumulate(g.T)

    return make_node("transpose", np.ascontiguousarray(a.data.T), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ValueError(
                f"concat: shape mismatch along non-concat axes: {[t.shape for t in tensors]}"
            )
    _check_finite("concat", *tensors)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node("concat", out, tensors, bw)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Stack (C_i × T) tensors into (ΣC_i × T)."""
    return concat(tensors, axis=0)


def slice_axis(a: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    axis = axis % a.data.ndim
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop, step)
    idx = tuple(idx)
    out = a.data[idx]
    if out.size == 0:
        raise ValueError(f"slice: empty slice [{start}:{stop}:{step}] of axis {axis} in {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return make_node("slice", np.ascontiguousarray(out), (a,), bw)


def slice_time(a: Tensor, start: int, stop: int, step: int = 1) -> Tensor:
    """Slice along the last (time) axis."""
    return slice_axis(a, -1, start, stop, step)


def pad_time(a: Tensor, right: int, left: int = 0) -> Tensor:
    """Zero-pad the last axis."""
    if right == 0 and left == 0:
        return a
    width = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    n = a.shape[-1]

    def bw(g):
        a._accumulate(g[..., left:left + n])

    return make_node("pad", np.pad(a.data, width), (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001
    _check_finite("sum", a)

    def bw(g):
        a._accumulate(np.full(a.shape, float(g)))

    return make_node("sum", np.array(a.data.sum()), (a,), bw)


def mean(a: Tensor) -> Tensor:
    _check_finite("mean", a)
    n = a.size

    def bw(g):
        a._accumulate(np.full(a.shape, float(g) / n))

    return make_node("mean", np.array(a.data.sum() / n), (a,), bw)


def softmax_lastdim(a: Tensor) -> Tensor:
    _check_finite("softmax_lastdim", a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return make_node("softmax", out, (a,), bw)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_loss(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute error over the samples NOT covered by ``mask``.

    ``mask`` is a boolean array over the last (time) axis; True marks a
    sample excluded from the loss. Excluded samples never enter the sum,
    so their gradient is exactly zero and their target values are never read.
    """
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    _check_finite("l1_loss", pred)
    if mask is None:
        keep = None
        diff = pred.data - target
        n = diff.size
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (pred.shape[-1],):
            raise ValueError(
                f"l1_loss: mask length {mask.shape} does not match time length {pred.shape[-1]}"
            )
        keep = ~mask
        if not keep.any():
            raise ValueError("l1_loss: empty loss support (every sample is masked)")
        diff = pred.data[..., keep] - target[..., keep]
        n = diff.size
    if not np.isfinite(diff).all():
        raise FloatingPointError("l1_loss: non-finite target in loss support")
    sign = np.sign(diff)

    def bw(g):
        scaled = sign * (float(g) / n)
        if keep is None:
            pred._accumulate(scaled)
        else:
            full = np.zeros_like(pred.data)
            full[..., keep] = scaled
            pred._accumulate(full)

    return make_node("l1_loss", np.array(np.abs(diff).sum() / n), (pred,), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor reachable from ``loss``.

    The graph is released afterwards; a second call without a fresh
    forward pass raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise GraphError(f"backward: loss must have exactly one element, got shape {loss.shape}")
    if loss._released:
        raise GraphError("backward: graph already released; run a new forward pass first")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not depend on any tensor requiring grad")
    order = _topological(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node._backward = None
            node._parents = ()
            node._released = True


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
