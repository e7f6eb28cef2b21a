"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a fresh :class:`Tensor`. When any input requires a gradient the
output keeps references to its parents plus a closure that pushes the upstream
gradient back to them; :meth:`Tensor.backward` walks that recorded graph in
reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LOG_EPS = 1e-12


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

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
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward called on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        # intermediate grads are scratch; only leaves keep theirs
        upstream: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                upstream[key] = upstream[key] + pg if key in upstream else pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    # op results are already fresh arrays; skip the defensive copy in __init__
    t = Tensor.__new__(Tensor)
    t.data = np.asarray(data, dtype=np.float64)
    t.grad = None
    t.op = op
    if any(p.requires_grad for p in parents):
        t.requires_grad, t._parents, t._backward = True, tuple(parents), backward
    else:
        t.requires_grad, t._parents, t._backward = False, (), None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch-broadcasting; both operands must be at least 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"affine: bias {b.shape} does not match weight {w.shape}")
    out_shape = x.shape[:-1] + (w.shape[1],)
    flat = x.data.reshape(-1, w.shape[0])
    out = flat @ w.data
    if b is not None:
        out += b.data

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = flat.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out.reshape(out_shape), parents, backward, "affine")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def expm1(x) -> Tensor:
    """``exp(x) - 1`` without cancellation near zero."""
    x = as_tensor(x)
    return _make(np.expm1(x.data), (x,), lambda g: (g * np.exp(x.data),), "expm1")


def log(x) -> Tensor:
    """Natural log with the argument floored at ``LOG_EPS``; no gradient below the floor."""
    x = as_tensor(x)
    safe = np.maximum(x.data, LOG_EPS)
    live = x.data >= LOG_EPS
    return _make(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.asarray(np.mean(x.data, axis=axes, keepdims=keepdims), dtype=np.float64)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, (x,), backward, "mean")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def concat(tensors: Sequence, axis: int = -1, broadcast: bool = False) -> Tensor:
    """Join along ``axis``. With ``broadcast=True`` the other axes of each part
    broadcast to a common shape, which avoids materializing expanded inputs."""
    ts = [as_tensor(t) for t in tensors]
    ndim = max(t.ndim for t in ts)
    axis = axis % ndim
    widths = [t.shape[axis - ndim] if t.ndim else 1 for t in ts]
    if broadcast:
        padded = [(1,) * (ndim - t.ndim) + t.shape for t in ts]
        try:
            common = np.broadcast_shapes(*[sh[:axis] + (1,) + sh[axis + 1:] for sh in padded])
        except ValueError:
            shapes = [t.shape for t in ts]
            raise DimensionError(f"concat: shapes {shapes} do not broadcast off axis {axis}") from None
        out_shape = list(common)
        out_shape[axis] = int(np.sum(widths))
        out = np.empty(out_shape)
        pos = 0
        index_prefix = (slice(None),) * axis
        for t, wdt in zip(ts, widths):
            out[index_prefix + (slice(pos, pos + wdt),)] = t.data
            pos += wdt
    else:
        try:
            out = np.concatenate([t.data for t in ts], axis=axis)
        except ValueError:
            shapes = [t.shape for t in ts]
            raise DimensionError(f"concat: shapes {shapes} disagree off axis {axis}") from None
    bounds = np.cumsum(widths)[:-1]

    def backward(g):
        pieces = np.split(g, bounds, axis=axis)
        return tuple(_unbroadcast(p, t.shape) for p, t in zip(pieces, ts))

    return _make(out, ts, backward, "concat")


def gather(x, indices, axis: int = 0) -> Tensor:
    """Select slices of ``x`` along ``axis``; repeated indices scatter-add on backward."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    size = x.shape[axis]
    if idx.size and (idx.min() < -size or idx.max() >= size):
        raise IndexError(f"gather: index out of range for axis {axis} of size {size}")
    idx = idx % size if idx.size else idx
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros(x.shape)
        moved = np.moveaxis(gx, axis, 0)
        g_moved = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, g_moved)
        return (gx,)

    return _make(out, (x,), backward, "gather")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _make(out.copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes: Sequence[int], shape=None) -> Tensor:
    """Permute axes; ``shape`` optionally reshapes the permuted result in the same copy."""
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    permuted = np.transpose(x.data, axes)
    out = np.ascontiguousarray(permuted) if shape is None else permuted.reshape(shape)
    if np.shares_memory(out, x.data):
        out = out.copy()

    def backward(g):
        return (np.transpose(g.reshape(permuted.shape), inverse),)

    return _make(out, (x,), backward, "transpose")


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: {x.shape} cannot broadcast to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def index(x, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    out = x.data[idx].copy()

    def backward(g):
        gx = np.zeros(x.shape)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), backward, "index")


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-6) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)`` over coordinates of ``point``."""
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = parameter(base.copy())
    f(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        hi = base.copy().reshape(-1)
        lo = base.copy().reshape(-1)
        hi[i] += h
        lo[i] -= h
        fp = f(Tensor(hi.reshape(base.shape))).item()
        fm = f(Tensor(lo.reshape(base.shape))).item()
        flat[i] = (fp - fm) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
