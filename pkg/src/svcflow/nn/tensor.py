"""Reverse-mode automatic differentiation over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
one gradient per parent.  :meth:`Tensor.backward` walks the recorded graph
in reverse topological order and accumulates into ``.grad``.  Only first
order gradients are supported.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties ------------------------------------------------
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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- graph -----------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into the ``.grad`` of every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
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
        self.grad = np.asarray(grad, dtype=self.dtype) if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g.astype(parent.dtype, copy=False) if parent.grad is None else parent.grad + g
            if node._parents:
                # interior gradients are not needed after propagation
                node.grad = None if node is not self else node.grad

    # -- operator sugar --------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

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
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Trainable leaf tensor; ``decay`` selects decoupled weight decay."""

    __slots__ = ("decay",)

    def __init__(self, data, dtype=None, name=None, decay=True):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.decay = decay


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None
    return a, b


# -- elementwise arithmetic ------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("only scalar exponents are supported")
    return _result(a.data ** exponent, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _result(out, (a,), backward)


# -- reductions and shape ----------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat along axis {axis}: shapes {ref.shape} and {t.shape} disagree")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, sizes, axis=ax)))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (unbroadcast(g, a.shape),))


# -- linear algebra ------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product (numpy semantics, operands at least 2-D)."""
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return _result(out, (a, b), backward)


def conv1d(x, weight, bias=None, padding="same", groups=1) -> Tensor:
    """Grouped 1-D convolution over channels-last input.

    ``x`` is ``(batch, time, c_in)``; ``weight`` is ``(c_out, c_in // groups,
    kernel)`` (cross-correlation, as in most frameworks).  ``padding`` is an
    int, a ``(left, right)`` pair, or ``"same"`` for odd kernels.
    """
    x = as_tensor(x)
    weight = as_tensor(weight, x)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input and weight, got {x.shape} and {weight.shape}")
    bsz, _, c_in = x.shape
    c_out, c_in_g, ksize = weight.shape
    if c_in % groups or c_out % groups or c_in // groups != c_in_g:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {weight.shape} at groups={groups}")
    if padding == "same":
        pad = ((ksize - 1) // 2, ksize // 2)
    elif isinstance(padding, int):
        pad = (padding, padding)
    else:
        pad = tuple(padding)
    xp = np.pad(x.data, ((0, 0), pad, (0, 0)))
    t_out = xp.shape[1] - ksize + 1
    if t_out < 1:
        raise ShapeError(f"conv1d: input length {x.shape[1]} too short for kernel {ksize}")
    win = sliding_window_view(xp, ksize, axis=1)  # (B, T_out, C_in, K)
    win = win.reshape(bsz, t_out, groups, c_in_g, ksize)
    w = weight.data.reshape(groups, c_out // groups, c_in_g, ksize)
    out = np.einsum("btgck,gock->btgo", win, w, optimize=True).reshape(bsz, t_out, c_out)

    def backward(g):
        g = g.reshape(bsz, t_out, groups, c_out // groups)
        gx = gw = None
        if weight.requires_grad:
            gw = np.einsum("btgck,btgo->gock", win, g, optimize=True).reshape(weight.shape)
        if x.requires_grad:
            gwin = np.einsum("btgo,gock->btgck", g, w, optimize=True).reshape(bsz, t_out, c_in, ksize)
            gxp = np.zeros_like(xp)
            for k in range(ksize):
                gxp[:, k:k + t_out, :] += gwin[..., k]
            gx = gxp[:, pad[0]:pad[0] + x.shape[1], :]
        return gx, gw

    result = _result(out, (x, weight), backward)
    if bias is not None:
        result = add(result, bias)
    return result


# -- normalisation -------------------------------------------------------------
def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (a,),
                   lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),))


def layer_norm(a, eps=1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result(xhat, (a,), backward)


def l2_normalize(a, eps=1e-12) -> Tensor:
    """Scale the last axis to unit Euclidean norm."""
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data ** 2, axis=-1, keepdims=True) + eps)
    out = a.data / norm
    return _result(out, (a,),
                   lambda g: ((g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm,))


def norm(a, axis=None, keepdims=False) -> Tensor:
    """Euclidean norm; the gradient at the origin is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.data ** 2, axis=axis, keepdims=keepdims))

    def backward(g):
        o, gg = out, g
        if axis is not None and not keepdims:
            o, gg = np.expand_dims(out, axis), np.expand_dims(g, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(o > 0, gg / np.where(o > 0, o, 1.0), 0.0)
        return (a.data * scale,)

    return _result(out, (a,), backward)
