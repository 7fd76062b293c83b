"""A small reverse-mode autodiff tensor on top of numpy.

Only the operations the scan transformer and the odometry CNN need are
provided. Broadcasting is limited to what ``np`` does for elementwise ops;
gradients are summed back to the operand shapes.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float32


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior nodes do not keep their gradient
                    node.grad = None if node is not self else node.grad

    # elementwise arithmetic ---------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        out = self.data + other.data

        def bw(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))

        return Tensor(out, _parents=(self, other), _backward=bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        out = self.data - other.data

        def bw(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(-g, other.shape))

        return Tensor(out, _parents=(self, other), _backward=bw)

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: self._accum(-g))

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            self._accum(_unbroadcast(g * b, self.shape))
            other._accum(_unbroadcast(g * a, other.shape))

        return Tensor(a * b, _parents=(self, other), _backward=bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            self._accum(_unbroadcast(g / b, self.shape))
            other._accum(_unbroadcast(-g * a / (b * b), other.shape))

        return Tensor(a / b, _parents=(self, other), _backward=bw)

    def __matmul__(self, other):
        a, b = self.data, other.data

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, other.shape))

        return Tensor(a @ b, _parents=(self, other), _backward=bw)

    def __getitem__(self, idx):
        out = self.data[idx]

        def bw(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._accum(full)

        return Tensor(out, _parents=(self,), _backward=bw)

    # shape ops ------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        src = self.shape
        return Tensor(self.data.reshape(shape), _parents=(self,),
                      _backward=lambda g: self._accum(g.reshape(src)))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,),
                      _backward=lambda g: self._accum(g.transpose(inv)))

    # reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        src = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, src))

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # pointwise functions -------------------------------------------------
    def square(self):
        x = self.data
        return Tensor(x * x, _parents=(self,), _backward=lambda g: self._accum(2.0 * g * x))

    def sqrt(self):
        y = np.sqrt(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: self._accum(0.5 * g / y))

    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: self._accum(g * y))

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor(y, _parents=(self,), _backward=lambda g: self._accum(g * y * (1.0 - y)))

    def clip(self, lo, hi):
        """Clamp values; the gradient passes only where the input is inside."""
        y = np.clip(self.data, lo, hi)
        m = (self.data >= lo) & (self.data <= hi)
        return Tensor(y, _parents=(self,), _backward=lambda g: self._accum(g * m))

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: self._accum(g * (1.0 - y * y)))

    def relu(self):
        m = self.data > 0
        return Tensor(self.data * m, _parents=(self,), _backward=lambda g: self._accum(g * m))

    def gelu(self):
        # tanh approximation; smooth, so finite differences behave everywhere
        x = self.data
        c = np.asarray(np.sqrt(2.0 / np.pi), dtype=x.dtype)
        u = c * (x + 0.044715 * x ** 3)
        t = np.tanh(u)
        y = 0.5 * x * (1.0 + t)

        def bw(g):
            du = c * (1.0 + 3 * 0.044715 * x * x)
            self._accum(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

        return Tensor(y, _parents=(self,), _backward=bw)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            self._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

        return Tensor(y, _parents=(self,), _backward=bw)


def as_tensor(x, dtype=DTYPE):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors, axis=-1):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accum(piece)

    return Tensor(data, _parents=tuple(tensors), _backward=bw)


def stack(tensors, axis=0):
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis))

    return Tensor(data, _parents=tuple(tensors), _backward=bw)
