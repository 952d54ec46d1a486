"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation builds an output ``Tensor`` holding references
to its inputs plus a closure mapping the output gradient to input gradients.
``backward`` walks that graph in reverse topological order, accumulates
gradients on the leaves, and then drops the graph.
"""

from __future__ import annotations

import contextlib
import warnings

import numpy as np
import scipy.special

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "flags")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name
        self.flags = None

    # -- introspection -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- operators -----------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def astype(self, dtype):
        return astype(self, dtype)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap ``data`` as the result of an op over ``parents``.

    ``backward_fn(grad_out)`` returns one gradient (or ``None``) per parent,
    already shaped like that parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    # bare numbers/arrays adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward_fn(g):
        # skip constant operands: they may hold -inf mask entries
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_op(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return make_op(out, (a, b), backward_fn)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = x.dtype.type(factor)
    return make_op(x.data * factor, (x,), lambda g: (g * factor,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return scipy.special.expit(z)


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return make_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.dtype)
    return make_op(out, (x,), lambda g: (g * _sigmoid(x.data),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def astype(x, dtype) -> Tensor:
    x = as_tensor(x)
    src = x.dtype
    return make_op(x.data.astype(dtype), (x,), lambda g: (g.astype(src),))


# -- reductions and shape ----------------------------------------------------

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_op(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return make_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return make_op(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer, type(Ellipsis), type(None))) for p in parts)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_op(x.data[index], (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with broadcast leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands with >= 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ValueError(f"matmul leading dims not broadcastable: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""
    x = as_tensor(x)
    w = weight
    out = x.data @ w.data
    if bias is not None:
        out = out + bias.data
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        flat_g = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ flat_g if w.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, flat_g.sum(axis=0)

    return make_op(out, parents, backward)


# -- normalisation and attention pieces ------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax; ``-inf`` entries get exactly zero weight.

    Rows with every entry ``-inf`` come back as zeros and are reported in
    ``out.flags`` (a boolean array over the non-reduced axes).
    """
    x = as_tensor(x)
    peak = np.max(x.data, axis=axis, keepdims=True)
    dead = ~np.isfinite(peak)
    safe_peak = np.where(dead, 0.0, peak)
    with np.errstate(invalid="ignore"):
        e = np.exp(x.data - safe_peak)
    e = np.where(dead, 0.0, e)
    total = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, total, out=np.zeros_like(e), where=total > 0).astype(x.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    result = make_op(out, (x,), backward)
    if np.any(dead):
        result.flags = np.squeeze(dead, axis=axis)
        warnings.warn("softmax over a fully masked row; returning zeros", RuntimeWarning,
                      stacklevel=2)
    return result


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply per-feature gain and bias."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            n = x.shape[-1]
            gx = inv_std / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, g.shape[-1])
        ggain = (flat_g * xhat.reshape(-1, xhat.shape[-1])).sum(axis=0)
        return gx, ggain, flat_g.sum(axis=0)

    return make_op(out.astype(x.dtype), (x, gain, bias), backward)


def embedding_lookup(table, indices) -> Tensor:
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(f"embedding index out of range [0, {vocab})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(table.data[idx], (table,), backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) while training, identity otherwise."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,))


def conv1d_causal(x, kernel, bias=None) -> Tensor:
    """Depthwise causal convolution along the time axis.

    ``x`` is ``(..., L, C)`` and ``kernel`` is ``(C, W)``; output ``t`` sees
    inputs ``t - W + 1 .. t`` with zeros before the start.
    """
    x = as_tensor(x)
    width = kernel.shape[1]
    length = x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 2) + [(width - 1, 0), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(width):
        out = out + xp[..., j:j + length, :] * kernel.data[:, j]
    if bias is not None:
        out = out + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for j in range(width):
            gp[..., j:j + length, :] += g * kernel.data[:, j]
            gk[:, j] = (g * xp[..., j:j + length, :]).reshape(-1, g.shape[-1]).sum(axis=0)
        gx = gp[..., width - 1:, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return make_op(out, parents, backward)


# -- driver ------------------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires grad, then free the graph."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.dtype, copy=True)
            else:
                parent.grad += g
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None
