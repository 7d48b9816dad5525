"""Dense fp64 tensors with a reverse-mode gradient tape.

Broadcasting follows numpy's trailing-axes rule. An operation is recorded on
the innermost active :class:`Tape` only when at least one operand is a
gradient-tracking leaf or an output already recorded on that tape; everything
else runs as plain numpy.

    with Tape() as tape:
        loss = (w * x).sum()
    tape.backward(loss)
    w.grad
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording on the current thread."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


class Tape:
    """Ordered record of operations; consumed by one call to :meth:`backward`.

    Tapes are per-thread: a tape entered on one thread is invisible to others,
    so data-parallel workers each hold their own.
    """

    def __init__(self):
        self.nodes: list = []
        self.consumed = False
        self._leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)

    def record(self, out, parents, backward, op):
        out._tape = self
        self.nodes.append((out, parents, backward, op))

    def reset(self):
        self.nodes = []
        self.consumed = False
        self._leaf_grads = {}

    def backward(self, loss: "Tensor", accumulate: bool = True):
        """Populate gradients of ``loss`` w.r.t. every tracking leaf.

        With ``accumulate`` the results are added into ``leaf.grad``; either
        way they stay retrievable through :meth:`grad_of`.
        """
        if self.consumed:
            raise RuntimeError("tape already consumed; call reset() before reuse")
        if loss.data.size != 1 or loss.ndim != 0:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise RuntimeError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for out, parents, fn, _ in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None:
                    continue
                key = id(p)
                if p._tape is self:
                    grads[key] = grads[key] + pg if key in grads else pg
                elif p.requires_grad:
                    if key in leaves:
                        leaves[key] = (p, leaves[key][1] + pg)
                    else:
                        leaves[key] = (p, pg)

        for p, g in leaves.values():
            g = np.array(g, dtype=np.float64).reshape(p.shape)
            if accumulate:
                p.grad = g.copy() if p.grad is None else p.grad + g
        self._leaf_grads = {k: (p, np.asarray(g).reshape(p.shape)) for k, (p, g) in leaves.items()}
        self.nodes = []
        self.consumed = True

    def grad_of(self, t: "Tensor") -> np.ndarray:
        entry = self._leaf_grads.get(id(t))
        if entry is None or entry[0] is not t:
            return np.zeros_like(t.data)
        return entry[1]

    def first_nonfinite(self) -> tuple[str, tuple] | None:
        """(op name, shape) of the earliest recorded output holding NaN/inf."""
        for out, _, _, op in self.nodes:
            if not np.all(np.isfinite(out.data)):
                return op, out.shape
        return None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._tape is None:
            raise RuntimeError("tensor is not attached to a tape")
        self._tape.backward(self)

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return reduce_mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def sqrt(self): return sqrt(self)
    def relu(self): return relu(self)
    def sigmoid(self): return sigmoid(self)
    def softplus(self): return softplus(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._tape = None
    tape = active_tape()
    if tape is not None and not tape.consumed:
        if any(p.requires_grad or p._tape is tape for p in parents):
            tape.record(out, tuple(parents), backward, op)
    return out


def primitive(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Hook for modules defining their own differentiable primitives.

    ``backward(g)`` receives the output gradient and returns one gradient
    (or ``None``) per parent, each already shaped like that parent.
    """
    return _make(np.asarray(data, dtype=np.float64), parents, backward, op)


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


def _bshape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise binary

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), backward, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


# elementwise unary

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # relu'(0) = 0
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")  # NaN propagates


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + e^x), written as max(x, 0) + log1p(e^-|x|) so it never overflows."""
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# reductions and shape

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)
    return _make(np.asarray(out), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(reduce_sum(a, axes, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _make(np.array(out), (a,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _make(out, ts, backward, "concat")


# linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product over the two trailing axes with broadcast batch prefixes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch prefixes of {a.shape} and {b.shape} do not broadcast") from None
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))
    return _make(out, (a, b), backward, "matmul")


def conv1d(x, kernel) -> Tensor:
    """Depthwise 'same' convolution: x (B, L, D), kernel (W, D), W odd.

    out[b, t, d] = sum_w x[b, t + w - W//2, d] * kernel[w, d], zero padded.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0:
        raise ConfigError(f"conv1d kernel must be (W, D) with odd W, got {kernel.shape}")
    if x.ndim != 3 or x.shape[2] != kernel.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernel {kernel.shape}")
    W = kernel.shape[0]
    pad = W // 2
    L = x.shape[1]
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    k = kernel.data
    out = np.zeros_like(x.data)
    for w in range(W):
        out += xp[:, w:w + L, :] * k[w]

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        for w in range(W):
            gxp[:, w:w + L, :] += g * k[w]
            gk[w] = (g * xp[:, w:w + L, :]).sum(axis=(0, 1))
        return (gxp[:, pad:pad + L, :], gk)
    return _make(out, (x, kernel), backward, "conv1d")


# normalisation, probability, losses

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax received non-finite input")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), backward, "softmax")


def l2norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean length along ``axis``; the gradient at a zero vector is taken as 0."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.where(n > 0, g * x.data / safe, 0.0),)
    return _make(n if keepdims else n.squeeze(axis), (x,), backward, "l2norm")


def mse(a, b) -> Tensor:
    """Mean of squared differences over every element."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = d.size

    def backward(g):
        gd = g * 2.0 * d / n
        return (gd, -gd)
    return _make(np.asarray((d * d).mean()), (a, b), backward, "mse")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply per-channel scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))
    return _make(out, (x, gamma, beta), backward, "layer_norm")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


def backward(loss: Tensor):
    loss.backward()
