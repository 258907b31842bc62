"""Reverse-mode automatic differentiation on dense float64 tensors.

Operations on :class:`Tensor` values are evaluated eagerly.  When a
:class:`Tape` is active (``with Tape() as tape:``) and at least one operand
requires a gradient, the operation is appended to the tape together with
its vector-Jacobian product.  ``tape.backward(loss)`` walks the tape once in
reverse order.

Example::

    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
    tape.backward(y)[x]   # array(6.)
"""

from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "record_op",
    "as_tensor",
    "check_gradients",
    "GradCheckReport",
    "OP_COUNTS",
    "checking_finite",
]

#: Forward evaluation counts per op kind (instrumentation; reset freely).
OP_COUNTS: Counter = Counter()

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""

    def __init__(self, kind: str, shapes: Sequence[tuple], detail: str = ""):
        self.kind = kind
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{kind}: incompatible shapes {', '.join(map(str, self.shapes))}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"{kind}: produced a non-finite value")


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def checking_finite(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any op produces NaN/Inf."""
    prev = getattr(_local, "check_finite", False)
    _local.check_finite = enabled
    try:
        yield
    finally:
        _local.check_finite = prev


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


@dataclass
class Node:
    kind: str
    out: Tensor
    operands: tuple
    vjp: Callable


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> dict:
        """Gradients of scalar ``loss`` w.r.t. every leaf that requires grad.

        Returns a dict keyed by the leaf tensors; leaves also get ``.grad``.
        """
        if loss.data.size != 1:
            raise ShapeError("backward", [loss.shape], "loss must be a scalar")
        produced = {id(n.out) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parts = node.vjp(g)
            for t, gt in zip(node.operands, parts):
                if gt is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = gt
                if key not in produced:
                    leaves[key] = t
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        out = {}
        for key, t in leaves.items():
            g = grads.get(key, np.zeros_like(t.data))
            t.grad = g
            out[t] = g
        return out


def record_op(kind: str, operands: Sequence[Tensor], value, vjp: Callable) -> Tensor:
    """Wrap an eagerly computed ``value`` and record it on the active tape.

    ``vjp(g)`` must return one gradient (or ``None``) per operand.
    """
    OP_COUNTS[kind] += 1
    out = Tensor(value)
    if getattr(_local, "check_finite", False) and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(kind)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in operands):
        out.requires_grad = True
        tape.nodes.append(Node(kind, out, tuple(operands), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(kind, a, b, fwd):
    a, b = as_tensor(a), as_tensor(b)
    try:
        return a, b, fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(kind, [a.shape, b.shape], str(exc)) from None


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b, out = _binary("add", a, b, np.add)
    return record_op(
        "add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b, out = _binary("sub", a, b, np.subtract)
    return record_op(
        "sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b, out = _binary("mul", a, b, np.multiply)
    return record_op(
        "mul",
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b, out = _binary("div", a, b, np.divide)
    return record_op(
        "div",
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record_op("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics, including batch broadcasting and 1-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", [a.shape, b.shape], "scalar operand")
    A = a.data[None, :] if a.ndim == 1 else a.data
    B = b.data[:, None] if b.ndim == 1 else b.data
    try:
        full = np.matmul(A, B)
    except ValueError as exc:
        raise ShapeError("matmul", [a.shape, b.shape], str(exc)) from None
    out = full
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def vjp(g):
        G = g
        if b.ndim == 1:
            G = G[..., None]
        if a.ndim == 1:
            G = np.expand_dims(G, -2)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(G, np.swapaxes(B, -1, -2)), A.shape).reshape(a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(A, -1, -2), G), B.shape).reshape(b.shape)
        return ga, gb

    return record_op("matmul", (a, b), out, vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return record_op("transpose", (a,), out, lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", [a.shape, tuple(shape)], str(exc)) from None
    return record_op("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return record_op(
        "sum", (a,), out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims),)
    )


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return record_op(
        "mean", (a,), out, lambda g: (_expand_reduced(g / count, a.shape, axis, keepdims),)
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", [t.shape for t in ts], str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return record_op("concat", ts, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def getitem(a, idx) -> Tensor:
    """Slicing (basic or integer-array indexing)."""
    a = as_tensor(a)
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise ShapeError("slice", [a.shape], str(exc)) from None
    advanced = _is_advanced(idx)

    def vjp(g):
        z = np.zeros_like(a.data)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return (z,)

    return record_op("slice", (a,), np.array(out, copy=True), vjp)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError("broadcast", [a.shape, tuple(shape)], str(exc)) from None
    return record_op("broadcast", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


def gather(a, index: np.ndarray) -> Tensor:
    """Rows ``a[index]`` along axis 0; the adjoint is a segment sum."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = a.data[index]
    n = a.shape[0]
    return record_op("gather", (a,), out, lambda g: (_kernels.segment_sum(g, index, n),))


def segment_sum(a, seg: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets given by ``seg``."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError("segment_sum", [a.shape, seg.shape])
    out = _kernels.segment_sum(a.data, seg, n)
    return record_op("segment_sum", (a,), out, lambda g: (g[seg],))


# --------------------------------------------------------------------------
# unary math
# --------------------------------------------------------------------------


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record_op("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record_op("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return record_op("log", (a,), out, lambda g: (g / a.data,))


def cosh(a) -> Tensor:
    a = as_tensor(a)
    return record_op("cosh", (a,), np.cosh(a.data), lambda g: (g * np.sinh(a.data),))


def sinh(a) -> Tensor:
    a = as_tensor(a)
    return record_op("sinh", (a,), np.sinh(a.data), lambda g: (g * np.cosh(a.data),))


def arcosh(a) -> Tensor:
    """Inverse hyperbolic cosine; the adjoint 1/sqrt(x^2-1) is singular at 1,
    so callers clamp the argument first."""
    a = as_tensor(a)
    x = a.data
    out = np.arccosh(x)
    return record_op("arcosh", (a,), out, lambda g: (g / np.sqrt((x - 1.0) * (x + 1.0)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return record_op("softplus", (a,), out, lambda g: (g / (1.0 + np.exp(-x)),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record_op("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip to ``[lo, hi]``.  Gradient is passed inside the closed interval
    (so the boundary takes the interior value) and zero outside it."""
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    active = np.ones(x.shape, dtype=bool)
    if lo is not None:
        active &= x >= lo
    if hi is not None:
        active &= x <= hi
    return record_op("clamp", (a,), out, lambda g: (g * active,))


def where(mask, a, b) -> Tensor:
    """Elementwise select: ``a`` where ``mask`` is true, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, a.data, b.data)
    except ValueError as exc:
        raise ShapeError("select", [mask.shape, a.shape, b.shape], str(exc)) from None
    return record_op(
        "select",
        (a, b),
        out,
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


def select_by_sign(sign, pos, negv) -> Tensor:
    """``pos`` where ``sign > 0`` else ``negv``."""
    return where(np.asarray(sign) > 0, pos, negv)


# --------------------------------------------------------------------------
# structured ops
# --------------------------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)
    return record_op(
        "softmax",
        (a,),
        out,
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


def segment_softmax(a, seg: np.ndarray, n: int) -> Tensor:
    """Softmax over index subsets: entries sharing ``seg`` form one softmax.

    ``a`` is (E,) or (E, H).  Buckets with no members simply produce no output
    entries, so empty neighbourhoods never yield NaN.
    """
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    x = a.data
    mx = _kernels.segment_max(x, seg, n)
    e = np.exp(x - mx[seg])
    den = _kernels.segment_sum(e, seg, n)
    out = e / den[seg]

    def vjp(g):
        s = _kernels.segment_sum(g * out, seg, n)
        return (out * (g - s[seg]),)

    return record_op("segment_softmax", (a,), out, vjp)


def edge_inner(a, b, row: np.ndarray, col: np.ndarray, sign: np.ndarray) -> Tensor:
    """Per-edge (signed) inner product of ``a[row]`` and ``b[col]``.

    ``a``: (N, H, D) or (N, 1, D) to share one vector across heads,
    ``b``: (M, H, D), ``sign``: (D,) coefficient vector.  Output (E, H).
    """
    a, b = as_tensor(a), as_tensor(b)
    if (a.ndim != 3 or b.ndim != 3 or a.shape[2] != b.shape[2]
            or a.shape[1] not in (1, b.shape[1])):
        raise ShapeError("edge_inner", [a.shape, b.shape])
    sign = np.ascontiguousarray(sign, dtype=np.float64)
    out = _kernels.edge_inner(a.data, b.data, row, col, sign)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _kernels.edge_scatter(g, b.data * sign, row, col, a.shape[0])
            if a.shape[1] == 1 and b.shape[1] != 1:
                ga = ga.sum(axis=1, keepdims=True)
        if b.requires_grad:
            ad_ = np.broadcast_to(a.data * sign, (a.shape[0],) + b.shape[1:])
            gb = _kernels.edge_scatter(g, ad_, col, row, b.shape[0])
        return ga, gb

    return record_op("edge_inner", (a, b), out, vjp)


_ONES = {}


def _ones(d):
    if d not in _ONES:
        _ONES[d] = np.ones(d)
    return _ONES[d]


def edge_scatter(c, v, row: np.ndarray, col: np.ndarray, n: int) -> Tensor:
    """``out[row[e], h] += c[e, h] * v[col[e], h]`` with ``out`` of shape (n, H, D)."""
    c, v = as_tensor(c), as_tensor(v)
    if c.ndim != 2 or v.ndim != 3 or c.shape[1] != v.shape[1] or c.shape[0] != len(row):
        raise ShapeError("edge_scatter", [c.shape, v.shape])
    out = _kernels.edge_scatter(c.data, v.data, row, col, n)

    def vjp(g):
        gc = gv = None
        if c.requires_grad:
            gc = _kernels.edge_inner(g, v.data, row, col, _ones(v.shape[2]))
        if v.requires_grad:
            gv = _kernels.edge_scatter(c.data, g, col, row, v.shape[0])
        return gc, gv

    return record_op("edge_scatter", (c, v), out, vjp)


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


def _rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


@dataclass
class GradCheckReport:
    tol: float
    blocks: dict = field(default_factory=dict)  # name -> max relative error

    @property
    def max_rel_err(self) -> float:
        return max(self.blocks.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.blocks.values())

    def failures(self) -> list:
        return [k for k, v in self.blocks.items() if not v < self.tol]


def check_gradients(f: Callable[[], Tensor], params, h: float = 1e-5, tol: float = 1e-6):
    """Compare tape gradients of ``f()`` against central differences.

    ``params`` is a dict name -> Tensor (or a list, named by position).  Each
    parameter's ``data`` is perturbed in place and restored.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(getattr(p, "name", None) or f"p{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    grads = tape.backward(loss)
    report = GradCheckReport(tol=tol)
    for name, p in named:
        analytic = grads.get(p, np.zeros_like(p.data))
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)
        report.blocks[name] = float(_rel_err(analytic, numeric).max()) if p.size else 0.0
    return report
