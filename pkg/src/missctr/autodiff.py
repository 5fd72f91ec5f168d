"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a C-contiguous float64 ndarray.  Every operation whose
inputs require gradients appends its output to the active Graph (a
dynamic tape rebuilt for each forward pass).  Graph.backward walks the
tape in strict reverse append order, so a node's gradient is fully
accumulated before its own backward closure fires; a tensor consumed by
k downstream ops receives the sum of the k contributions.

Gradients are never zeroed implicitly.  Leaf parameters keep their
.grad until zero_grad is called on them, which is what lets an
optimizer step read accumulated gradients and what makes the reset an
explicit, visible part of the training loop.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

COSINE_EPS = 1e-12


def _as_f64(data) -> np.ndarray:
    # ascontiguousarray would promote 0-d to 1-d, so guard it
    a = np.asarray(data, dtype=np.float64)
    if not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


class Tensor:
    """Dense float64 array with an optional gradient slot.

    data and grad (when present) always share one shape and are stored
    row-major.  requires_grad marks the tensor as a gradient sink;
    tensors produced by ops inherit it from their inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self, axis: int | None = None):
        return tsum(self, axis)

    def mean(self, axis: int | None = None):
        return tmean(self, axis)

    def reshape(self, shape: tuple[int, ...]):
        return reshape(self, shape)

    def flatten(self):
        return reshape(self, (-1,))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Graph:
    """Append-only tape of op outputs for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def append(self, t: Tensor) -> None:
        self.nodes.append(t)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and sweep the tape in reverse.

        loss must be scalar (shape () or size 1).  Nodes that never
        received a gradient are dead branches and are skipped.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.accumulate(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


_ACTIVE = Graph()
_GRAD_ENABLED = True


def active_graph() -> Graph:
    return _ACTIVE


def fresh_graph() -> Graph:
    """Start a new tape (one per forward pass) and make it active."""
    global _ACTIVE
    _ACTIVE = Graph()
    return _ACTIVE


@contextmanager
def no_grad():
    """Run forwards without taping; numerics are unchanged."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _register(out: Tensor, backward: Callable[[np.ndarray], None], *parents: Tensor) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        _ACTIVE.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _register(out, backward, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _register(out, backward, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _register(out, backward, a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def backward(g):
        a.accumulate(g * c)

    return _register(out, backward, a)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward(g):
        x.accumulate(g * (x.data > 0.0))

    return _register(out, backward, x)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic: exp is only ever taken of -|x|."""
    z = np.exp(-np.abs(x.data))
    val = np.where(x.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = Tensor(val)

    def backward(g):
        x.accumulate(g * val * (1.0 - val))

    return _register(out, backward, x)


def texp(x: Tensor) -> Tensor:
    val = np.exp(x.data)
    out = Tensor(val)

    def backward(g):
        x.accumulate(g * val)

    return _register(out, backward, x)


def tlog(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def backward(g):
        x.accumulate(g / x.data)

    return _register(out, backward, x)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through wherever the input
    already lies inside the interval (inclusive)."""
    out = Tensor(np.clip(x.data, lo, hi))
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x.accumulate(g * inside)

    return _register(out, backward, x)


# ---------------------------------------------------------------------------
# reductions and reshaping


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            x.accumulate(np.broadcast_to(g, x.shape).copy())
        else:
            x.accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _register(out, backward, x)


def tmean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    out = Tensor(x.data.mean(axis=axis))

    def backward(g):
        if axis is None:
            x.accumulate(np.broadcast_to(g / n, x.shape).copy())
        else:
            x.accumulate(np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy())

    return _register(out, backward, x)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        x.accumulate(g.reshape(x.shape))

    return _register(out, backward, x)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        x.accumulate(g.transpose(inv))

    return _register(out, backward, x)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                p.accumulate(g[tuple(idx)])
            offset += n

    return _register(out, backward, *parts)


def slice_window(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous window along one axis; backward scatters into place."""
    extent = x.shape[axis]
    if start < 0 or length < 0 or start + length > extent:
        raise IndexError(
            f"window [{start}, {start + length}) out of range for axis {axis} with extent {extent}"
        )
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate(full)

    return _register(out, backward, x)


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile a vector into n identical rows; backward sums over rows."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows needs a vector, got shape {v.shape}")
    out = Tensor(np.broadcast_to(v.data, (n, v.shape[0])).copy())

    def backward(g):
        v.accumulate(g.sum(axis=0))

    return _register(out, backward, v)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _register(out, backward, a, b)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup table[indices]; backward scatter-adds, so repeated
    indices sum their gradients."""
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-d table, got shape {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"row index out of range for table with {table.shape[0]} rows: "
            f"min={idx.min()}, max={idx.max()}"
        )
    out = Tensor(table.data[idx])

    def backward(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table.accumulate(acc)

    return _register(out, backward, table)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) with norms floored at COSINE_EPS, defined for zero vectors."""
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data)
    nb = np.linalg.norm(b.data)
    ra = max(na, COSINE_EPS)
    rb = max(nb, COSINE_EPS)
    s = float(a.data @ b.data) / (ra * rb)
    out = Tensor(np.asarray(s))

    def backward(g):
        gs = float(g)
        if a.requires_grad:
            da = b.data / (ra * rb)
            if na > COSINE_EPS:
                da = da - s * a.data / (ra * ra)
            a.accumulate(gs * da)
        if b.requires_grad:
            db = a.data / (ra * rb)
            if nb > COSINE_EPS:
                db = db - s * b.data / (rb * rb)
            b.accumulate(gs * db)

    return _register(out, backward, a, b)


def normalize_rows(x: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Divide each row by max(its L2 norm, eps).  Row products of two
    normalized matrices are then exactly the floored cosine values."""
    if x.ndim != 2:
        raise ShapeError(f"normalize_rows needs a matrix, got shape {x.shape}")
    norms = np.linalg.norm(x.data, axis=1)
    r = np.maximum(norms, eps)
    y = x.data / r[:, None]
    out = Tensor(y)
    live = norms > eps

    def backward(g):
        # d(x/r)/dx with r = ||x||: (g - y (y.g)) / r; below the floor r is constant.
        proj = (y * g).sum(axis=1, keepdims=True)
        gx = np.where(live[:, None], (g - y * proj) / r[:, None], g / r[:, None])
        x.accumulate(gx)

    return _register(out, backward, x)
