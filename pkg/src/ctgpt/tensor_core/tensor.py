"""Numpy-backed tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly and, when any input requires a gradient,
records a closure mapping the output gradient to one gradient per parent.
``Tensor.backward`` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ArgumentError

ArrayLike = Union[np.ndarray, float, int, Sequence]

_grad_enabled = True
_default_dtype = np.dtype(np.float32)


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new float tensors (gradcheck runs in float64)."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = ""

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}, op={self.op!r})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numel(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # graph traversal
    def _topo(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
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

    def backward(self) -> None:
        if self.data.size != 1 or self.data.ndim > 1:
            raise ArgumentError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ArgumentError("loss does not depend on any tensor that requires grad")
        order = self._topo()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operators
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def permute(self, *axes) -> "Tensor":
        return permute(self, axes[0] if len(axes) == 1 and not isinstance(axes[0], int) else axes)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    def transpose_last(self) -> "Tensor":
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_default_dtype))


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        return _result(a.data * b, (a,), lambda g: (g * b,), "scale")
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return mul(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data, (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        "div",
    )


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    c = float(np.sqrt(2.0 / np.pi))
    xd = x.data
    inner = c * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _result(out.astype(xd.dtype, copy=False), (x,), backward, "gelu")


# shape ------------------------------------------------------------------

def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if len(axes) != x.ndim or sorted(axes) != list(range(x.ndim)):
        raise ArgumentError(f"invalid permutation {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return _result(
        np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
        lambda g: (np.transpose(g, inverse),),
        "permute",
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape) or int(np.prod(shape, dtype=np.int64)) != x.numel():
        raise ArgumentError(f"cannot reshape {x.shape} into {shape}")
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat of an empty list")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
        "concat",
    )


def take_rows(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), backward, "slice")


# reductions --------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.numel()
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ArgumentError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ArgumentError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ArgumentError(f"matmul batch prefixes not broadcastable: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else unbroadcast(ga, a.shape),
            None if gb is None else unbroadcast(gb, b.shape),
        )

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    y = matmul(x, weight.transpose_last())
    return y if bias is None else add(y, bias)


# pooling ----------------------------------------------------------------

def avg_pool3d(x: Tensor, kernel: int) -> Tensor:
    """Average pool over the last three axes of a [B, C, d1, d2, d3] tensor, stride == kernel."""
    k = int(kernel)
    if x.ndim != 5:
        raise ArgumentError(f"avg_pool3d expects rank 5, got shape {x.shape}")
    if k <= 0:
        raise ArgumentError(f"pool kernel must be positive, got {kernel}")
    b, c, d1, d2, d3 = x.shape
    if d1 % k or d2 % k or d3 % k:
        raise ArgumentError(f"spatial dims {(d1, d2, d3)} not divisible by kernel {k}")
    blocks = x.data.reshape(b, c, d1 // k, k, d2 // k, k, d3 // k, k)
    out = blocks.mean(axis=(3, 5, 7))
    scale = 1.0 / (k ** 3)

    def backward(g):
        spread = np.broadcast_to(
            (g * scale)[:, :, :, None, :, None, :, None],
            (b, c, d1 // k, k, d2 // k, k, d3 // k, k),
        )
        return (spread.reshape(x.shape).astype(x.dtype, copy=True),)

    return _result(out.astype(x.dtype, copy=False), (x,), backward, "avg_pool3d")


# normalisation / probabilities -------------------------------------------

def layer_norm(x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = xd.shape[-1]

    def backward_norm(g):
        dx = inv / n * (n * g - g.sum(axis=-1, keepdims=True) - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (dx.astype(xd.dtype, copy=False),)

    out = _result(xhat.astype(xd.dtype, copy=False), (x,), backward_norm, "layer_norm")
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax with max subtraction; ``mask`` (True = keep) excludes entries entirely."""
    xd = x.data
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p.astype(x.dtype, copy=False), (x,), backward, "softmax")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ArgumentError(f"token id out of range [0, {vocab})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), backward, "embedding")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood over positions with mask == 1."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ArgumentError(f"logits {logits.shape} incompatible with targets {targets.shape}")
    m = np.ones(targets.shape) if mask is None else np.asarray(mask)
    if m.shape != targets.shape:
        raise ArgumentError(f"mask shape {m.shape} differs from targets {targets.shape}")
    m = m.astype(logits.dtype)
    count = m.sum()
    if count == 0:
        raise ArgumentError("cross_entropy mask selects no positions")
    safe = np.where(m > 0, targets, 0)
    ld = logits.data
    shifted = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * m).sum() / count

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        return ((p - onehot) * (m / count)[..., None] * g,)

    return _result(np.asarray(loss, dtype=ld.dtype), (logits,), backward, "cross_entropy")
