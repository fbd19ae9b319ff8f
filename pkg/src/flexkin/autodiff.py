"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array, remembers the tensors it was
computed from and how to push a gradient back to them.  Calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order.

The op set is the one needed by the forward kinematics layer, the fusion
network and the losses; it is not meant as a general framework.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __array_priority__ = 100.0

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

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
    def T(self):
        return self.transpose()

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # interior gradients are transient; reset them so repeated calls on a
        # shared graph do not double count
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        return Tensor(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.data, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor(a.data - b.data, (a, b), back)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

        return Tensor(out, (a, b), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        return Tensor(a.data ** p, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1)))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if b.ndim == 1:
                ga = g[..., None] * b.data
                gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(0)
            elif a.ndim == 1:
                ga = (b.data @ g[..., None])[..., 0].reshape(-1, a.shape[0]).sum(0)
                gb = a.data[:, None] * g[..., None, :]
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
                gb = np.swapaxes(a.data, -1, -2) @ g
            if a.requires_grad:
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor(a.data @ b.data, (a, b), back)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- unary functions --------------------------------------------------------

    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor(out, (a,), lambda g: a._accumulate(g * out))

    def log(self):
        a = self
        return Tensor(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor(out, (a,), lambda g: a._accumulate(g * 0.5 / out))

    def tanh(self):
        a = self
        out = np.tanh(a.data)
        return Tensor(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))

    def sigmoid(self):
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))

    def softplus(self):
        a = self
        out = np.logaddexp(0.0, a.data)
        sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor(out, (a,), lambda g: a._accumulate(g * sig))

    def leaky_relu(self, slope=0.2):
        a = self
        scale = np.where(a.data > 0, 1.0, slope)
        return Tensor(a.data * scale, (a,), lambda g: a._accumulate(g * scale))

    def square(self):
        return self * self

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor(out, (a,), back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[i] for i in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis, keepdims=False):
        """Max along one axis; ties share the gradient equally."""
        a = self
        out = a.data.max(axis=axis, keepdims=True)
        mask = (a.data == out).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(g * mask)

        return Tensor(out if keepdims else np.squeeze(out, axis), (a,), back)

    def softmax(self, axis=-1):
        a = self
        z = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

        return Tensor(out, (a,), back)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        a = self
        return Tensor(a.data.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))

    def swapaxes(self, i, j):
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(axes)

    def expand_dims(self, axis):
        a = self
        return Tensor(np.expand_dims(a.data, axis), (a,), lambda g: a._accumulate(g.reshape(a.shape)))

    def broadcast_to(self, shape):
        a = self
        return Tensor(np.broadcast_to(a.data, shape), (a,),
                      lambda g: a._accumulate(_unbroadcast(g, a.shape)))

    def __getitem__(self, idx):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            if _is_basic_index(idx):
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            a._accumulate(full)

        return Tensor(a.data[idx], (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def where(mask, a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def back(g):
        a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor(np.where(mask, a.data, b.data), (a, b), back)


# -- quaternion primitives ---------------------------------------------------------

def _hamilton(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    """Hamilton product over the last axis (w, x, y, z); broadcasts."""
    a, b = as_tensor(a), as_tensor(b)
    out = _hamilton(*np.broadcast_arrays(a.data, b.data))

    # product is bilinear: d/da <g, a*b> = g * conj(b), d/db = conj(a) * g
    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(_hamilton(g, b.data * _CONJ), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(_hamilton(a.data * _CONJ, g), b.shape))

    return Tensor(out, (a, b), back)


def quat_conj(q):
    return as_tensor(q) * _CONJ


def quat_rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    q, v = as_tensor(q), as_tensor(v)
    zero = Tensor(np.zeros(v.shape[:-1] + (1,)))
    vq = concat([zero, v], axis=-1)
    return quat_mul(quat_mul(q, vq), quat_conj(q))[..., 1:]


def normalize(x, axis=-1, eps=0.0):
    x = as_tensor(x)
    n = ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()
    return x / n


# -- convolution -------------------------------------------------------------------

def conv1d(x, kernel, bias=None):
    """Same-padded temporal cross-correlation.

    ``x`` is (..., T, C_in).  ``kernel`` is (k, C_in, C_out) shared across the
    leading axes, or (G, k, C_in, C_out) for a grouped stack where ``x`` is
    (..., G, T, C_in).  ``k`` must be odd so the length T is preserved.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    grouped = kernel.ndim == 4
    k = kernel.shape[-3]
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if x.shape[-1] != kernel.shape[-2]:
        raise ValueError(f"channel mismatch: input has {x.shape[-1]}, kernel expects {kernel.shape[-2]}")
    if grouped and x.shape[-3] != kernel.shape[0]:
        raise ValueError(f"group mismatch: input has {x.shape[-3]}, kernel has {kernel.shape[0]}")
    pad = k // 2
    T = x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    win = sliding_window_view(xp, T, axis=-2)        # (..., k, C_in, T)
    gsub = "g" if grouped else ""
    out = np.einsum(f"...{gsub}kit,{gsub}kio->...{gsub}to", win, kernel.data, optimize=True)

    def back(g):
        if kernel.requires_grad:
            lead = "".join(chr(ord("a") + i) for i in range(x.ndim - (3 if grouped else 2)))
            gk = np.einsum(f"{lead}{gsub}kit,{lead}{gsub}to->{gsub}kio", win, g, optimize=True)
            kernel._accumulate(gk)
        if x.requires_grad:
            gw = np.einsum(f"...{gsub}to,{gsub}kio->...{gsub}kti", g, kernel.data, optimize=True)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[..., i:i + T, :] += gw[..., i, :, :]
            x._accumulate(gxp[..., pad:pad + T, :])

    res = Tensor(out, (x, kernel), back)
    if bias is not None:
        bias = as_tensor(bias)
        if grouped:
            bias = bias.reshape(bias.shape[0], 1, bias.shape[-1])
        res = res + bias
    return res


def dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# -- finite-difference checking ------------------------------------------------------

def numerical_grad(f, params, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each parameter's data."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            down = f().item()
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def grad_check(f, params, h=1e-5):
    """Return the worst relative error between analytic and numerical gradients.

    The relative error of a parameter is ``|a - n| / max(|a|, |n|, 1e-8)``
    taken as a norm over that parameter's entries.
    """
    for p in params:
        p.zero_grad()
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = numerical_grad(f, params, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst
