"""Dense arrays with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy buffer. Ops on tensors that require gradients
record their parents and a backward closure; :func:`grad` walks that record in
reverse topological order and returns one adjoint per requested parameter.

Broadcasting is deliberately narrow: element-wise operands must have equal
shapes, or the shape of one must be a trailing suffix of the other (leading
dimension expansion). Anything else needs an explicit :func:`expand` or
:func:`reshape`.

Training and scoring run in float32; gradient checks use float64.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
LN_EPS = 1e-5

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


class ContractViolation(ValueError):
    """Raised when an operation's preconditions are not met."""


class NumericFault(ArithmeticError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str, shapes: Sequence[tuple]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        super().__init__(f"non-finite output from {op} with operand shapes {self.shapes}")


_recording = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolation("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, out: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericFault(op, [p.shape for p in parents])
    t = Tensor(out)
    t.op = op
    if _recording and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward
    return t


def _suffix_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if len(short) == 0 or long_[len(long_) - len(short):] == short:
        return
    raise ContractViolation(f"{op}: shapes {a} and {b} do not conform (only leading-dimension expansion is allowed)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    return g.reshape(shape)


# ---------------------------------------------------------------- element-wise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _suffix_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _suffix_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _suffix_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (_reduce_to(g * bd, ad.shape) if a.requires_grad else None,
                _reduce_to(g * ad, bd.shape) if b.requires_grad else None)

    return _make("mul", ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _suffix_broadcast(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_reduce_to(g / bd, ad.shape), _reduce_to(-g * ad / (bd * bd), bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make("log", out, (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + _GELU_K * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _make("gelu", out, (a,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    _suffix_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _reduce_to(ga, ad.shape),
                None if gb is None else _reduce_to(gb, bd.shape))

    return _make("matmul", np.matmul(ad, bd), (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None or len(axes) == 0:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) % a.ndim for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractViolation(f"transpose: {axes} is not a permutation of {a.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(np.transpose(a.data, axes)), (a,),
                 lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ContractViolation(f"reshape: cannot view {a.shape} as {shape}") from exc
    src = a.shape
    return _make("reshape", out, (a,), lambda g: (g.reshape(src),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly expand size-1 axes of ``a`` to ``shape`` (same rank)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ContractViolation(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make("expand", out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat: no inputs")
    axis = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ContractViolation(f"concat: shape {t.shape} does not conform to {ref} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(tensors)))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split into ``sections`` equal parts, or at the given indices."""
    axis = axis % a.ndim
    extent = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or extent % sections:
            raise ContractViolation(f"split: extent {extent} not divisible into {sections} parts")
        step = extent // sections
        cuts = [k * step for k in range(sections + 1)]
    else:
        cuts = [0, *[int(c) for c in sections], extent]
        if any(c1 > c2 for c1, c2 in zip(cuts, cuts[1:])):
            raise ContractViolation(f"split: indices {sections} not ascending within {extent}")
    return [_slice(a, axis, lo, hi) for lo, hi in zip(cuts, cuts[1:])]


def _slice(a: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(lo, hi)
    index = tuple(index)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _make("split", np.ascontiguousarray(a.data[index]), (a,), backward)


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(int(x) % ndim for x in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[x] for x in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make("mean", np.asarray(out, dtype=a.dtype), (a,), backward)


def max_(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max-reduce over one axis; the gradient goes to the first maximiser."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return (full,)

    return _make("max", out if keepdims else np.squeeze(out, axis), (a,), backward)


# ---------------------------------------------------------------- normalisation

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(a: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make("layer_norm", xhat.astype(x.dtype, copy=False), (a,), backward)


# ---------------------------------------------------------------- gradients

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss`` with respect to ``wrt``.

    Parameters that did not take part in the computation get zeros. The
    recorded graph is released afterwards, so each loss can be
    differentiated once.
    """
    wrt = list(wrt)
    if loss.size != 1:
        raise ContractViolation(f"grad needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractViolation("the graph of this loss has already been consumed")
    keep = {id(p) for p in wrt}
    order = _toposort(loss)
    adj = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adj.get(id(node))
        if g is None or node._backward is None:
            continue
        if id(node) not in keep:
            del adj[id(node)]
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = adj.get(id(parent))
            adj[id(parent)] = pg if prev is None else prev + pg
    for node in order:
        node._parents = ()
        node._backward = None
    loss._consumed = True
    out = []
    for p in wrt:
        g = adj.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise NumericFault("grad", [p.shape])
        out.append(np.asarray(g, dtype=p.dtype).reshape(p.shape))
    return out
