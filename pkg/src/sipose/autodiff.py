"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation on a tensor that requires grad appends a node to the tape.
Nodes carry a global sequence number, so ``backward`` can replay them in the
exact reverse of the order they were recorded. Gradients accumulate into
leaf ``.grad`` buffers until ``zero_grad`` is called.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

_seq = itertools.count()
_recorders: list["GradRecorder"] = []
_grad_enabled = True


class _Node:
    __slots__ = ("seq", "parents", "backward", "kind")

    def __init__(self, seq, parents, backward, kind):
        self.seq = seq
        self.parents = parents
        self.backward = backward
        self.kind = kind


class GradRecorder:
    """Context manager that keeps the ordered list of operations recorded while active.

    Recording order is also encoded in each node's sequence number, so a
    recorder is only needed to inspect the tape, not to differentiate.
    """

    def __init__(self):
        self.ops: list[_Node] = []

    def __enter__(self):
        _recorders.append(self)
        return self

    def __exit__(self, *exc):
        _recorders.remove(self)
        return False


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    # --- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # --- operators -----------------------------------------------------
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

    def __rmatmul__(self, other):
        return matmul(other, self)

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

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def record(data, parents, backward_fn, kind="op") -> Tensor:
    """Wrap ``data`` as the output of an operation over ``parents``.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(next(_seq), tuple(parents), backward_fn, kind)
        out._node = node
        for r in _recorders:
            r.ops.append(node)
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --- binary elementwise -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)), "div")


# --- unary elementwise --------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def sin(a):
    a = as_tensor(a)
    x = a.data
    return record(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def cos(a):
    a = as_tensor(a)
    x = a.data
    return record(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    x = a.data
    if np.any(x < 0):
        raise DomainError("log of negative value")
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a):
    a = as_tensor(a)
    x = a.data
    s = _sigmoid_np(x)
    return record(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), "silu")


def relu(a):
    a = as_tensor(a)
    x = a.data
    mask = x > 0
    return record(np.where(mask, x, 0.0), (a,), lambda g: (g * mask,), "relu")


def square(a):
    a = as_tensor(a)
    x = a.data
    return record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def sqrt(a):
    a = as_tensor(a)
    x = a.data
    if np.any(x < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x)
    return record(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clip(a, lo, hi):
    """Clamp values; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    x = a.data
    mask = (x >= lo) & (x <= hi)
    return record(np.clip(x, lo, hi), (a,), lambda g: (g * mask,), "clip")


_UNARY = {
    "neg": neg, "sin": sin, "cos": cos, "exp": exp, "log": log, "tanh": tanh,
    "sigmoid": sigmoid, "silu": silu, "relu": relu, "square": square, "sqrt": sqrt,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind, a, b=None):
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise op {kind!r}")


# --- linear algebra and reductions --------------------------------------

def matmul(a, b):
    """Batched matrix product over the last two axes with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return record(ad @ bd, (a, b), bw, "matmul")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return record(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return record(a.data[idx], (a,), bw, "getitem")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return record(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


def linear_scan(x, a, h0=None):
    """Diagonal recurrence h_t = a * h_{t-1} + x_t along axis -2.

    ``x`` is [..., T, H], ``a`` is [H]. Returns all states [..., T, H].
    """
    x, a = as_tensor(x), as_tensor(a)
    xd, ad = x.data, a.data
    T = xd.shape[-2]
    hs = np.empty_like(xd)
    h = np.zeros(xd.shape[:-2] + xd.shape[-1:]) if h0 is None else np.asarray(h0, dtype=np.float64)
    h_init = h
    for t in range(T):
        h = ad * h + xd[..., t, :]
        hs[..., t, :] = h

    def bw(g):
        gx = np.empty_like(g)
        carry = np.zeros(g.shape[:-2] + g.shape[-1:])
        for t in range(T - 1, -1, -1):
            carry = g[..., t, :] + ad * carry
            gx[..., t, :] = carry
        first = np.broadcast_to(h_init, hs.shape[:-2] + hs.shape[-1:])[..., None, :]
        prev = np.concatenate([first, hs[..., :-1, :]], axis=-2)
        ga = (gx * prev).reshape(-1, ad.shape[-1]).sum(axis=0)
        return gx, ga

    return record(hs, (x, a), bw, "scan")


# --- differentiation -----------------------------------------------------

def backward(loss: Tensor, visit=None):
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad.

    Nodes are replayed in strictly decreasing recording order. ``visit`` is
    an optional callback receiving each node as it is processed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._node is None:
        loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return
    # collect reachable non-leaf tensors
    seen = set()
    order = []
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        order.append(t)
        for p in t._node.parents:
            if p.requires_grad and p._node is not None and id(p) not in seen:
                stack_.append(p)
    order.sort(key=lambda t: t._node.seq, reverse=True)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if visit is not None:
            visit(node)
        pgrads = node.backward(g)
        for p, gp in zip(node.parents, pgrads):
            if gp is None or not p.requires_grad:
                continue
            if p._node is None:
                p.grad = gp.copy() if p.grad is None else p.grad + gp
            else:
                k = id(p)
                grads[k] = gp if k not in grads else grads[k] + gp


# --- feature transforms --------------------------------------------------

def positional_encode(x, d=4):
    """Map each scalar p to (sin(2^k pi p), cos(2^k pi p)) for k < d.

    Works on numpy arrays or tensors; the last axis of size n becomes 2*d*n.
    """
    if d < 1:
        raise ValueError("encoding width must be >= 1")
    freqs = (2.0 ** np.arange(d)) * np.pi
    if isinstance(x, Tensor):
        ang = reshape(x, x.shape + (1,)) * freqs
        enc = stack([sin(ang), cos(ang)], axis=-1)
        return reshape(enc, x.shape[:-1] + (x.shape[-1] * 2 * d,))
    x = np.asarray(x, dtype=np.float64)
    ang = x[..., None] * freqs
    enc = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return enc.reshape(x.shape[:-1] + (x.shape[-1] * 2 * d,))


@dataclass
class ScaleRecord:
    lo: np.ndarray
    hi: np.ndarray
    degenerate: np.ndarray = field(default=None)


def minmax_normalize(points):
    """Per-axis affine map of [..., N, 3] points into [0, 1].

    Axes whose extent is below 1e-9 map to 0.5.
    """
    p = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if p.shape[-2] < 1:
        raise ShapeError("need at least one point")
    lo = p.min(axis=-2, keepdims=True)
    hi = p.max(axis=-2, keepdims=True)
    span = hi - lo
    degen = span < 1e-9
    safe = np.where(degen, 1.0, span)
    out = np.where(degen, 0.5, (p - lo) / safe)
    return out, ScaleRecord(lo, hi, degen)


def minmax_denormalize(normed, rec: ScaleRecord):
    span = rec.hi - rec.lo
    return np.where(rec.degenerate, rec.lo, rec.lo + np.asarray(normed) * span)


def numeric_grad(f, x: np.ndarray, eps=1e-5):
    """Central finite differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g
