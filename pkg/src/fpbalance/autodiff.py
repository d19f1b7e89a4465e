"""A small tape-based reverse-mode automatic differentiation core.

Only what the convolutional VAE/CVAE need is here: elementwise arithmetic with
broadcasting, reductions, dense and (transposed) 2-D convolutions in NHWC
layout, reshapes and channel concatenation. Every op returns a ``Tensor`` that
remembers its parents and a closure propagating the upstream gradient.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None):
        value = np.asarray(value)
        self.value = value if value.dtype in (np.float32, np.float64) else value.astype(np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if _is_scalar(other) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf needing it."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents)

        grads = {id(self): np.ones_like(self.value) if grad is None else np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------- #
# elementwise and reductions
# --------------------------------------------------------------------------- #


def _is_scalar(x) -> bool:
    # Python scalars stay "weak" so float32 graphs are not promoted to float64
    return isinstance(x, (int, float))


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor(a.value + b, parents=(a,), backward_fn=lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        parents=(a, b),
        backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, parents=(a,), backward_fn=lambda g: (-g,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor(a.value * b, parents=(a,), backward_fn=lambda g: (g * b,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        parents=(a, b),
        backward_fn=lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.value), parents=(a,), backward_fn=lambda g: (g / a.value,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return Tensor(np.clip(a.value, lo, hi), parents=(a,), backward_fn=lambda g: (g * inside,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value**2, parents=(a,), backward_fn=lambda g: (2.0 * a.value * g,))


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(a.value.sum(axis=axis), parents=(a,), backward_fn=backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return Tensor(a.value * mask, parents=(a,), backward_fn=lambda g: (g * mask,))


def stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = stable_sigmoid(a.value)
    return Tensor(s, parents=(a,), backward_fn=lambda g: (g * s * (1.0 - s),))


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "linear": lambda t: t}


# --------------------------------------------------------------------------- #
# structural
# --------------------------------------------------------------------------- #


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(a.shape),))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    edges = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward_fn=lambda g: tuple(np.split(g, edges, axis=axis)),
    )


# --------------------------------------------------------------------------- #
# layers
# --------------------------------------------------------------------------- #


def dense(x, w, b) -> Tensor:
    """``x @ w + b`` with ``x`` (N, in), ``w`` (in, out), ``b`` (out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    return Tensor(
        x.value @ w.value + b.value,
        parents=(x, w, b),
        backward_fn=lambda g: (g @ w.value.T, x.value.T @ g, g.sum(axis=0)),
    )


def _tap(i: int, j: int, stride: int, hw) -> tuple:
    """Index of the strided window a kernel tap ``(i, j)`` touches."""
    h, w = hw
    return (slice(None), slice(i, i + stride * (h - 1) + 1, stride), slice(j, j + stride * (w - 1) + 1, stride))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, out_hw) -> np.ndarray:
    """``(N*Ho*Wo, kh*kw*C)`` patch matrix of an NHWC array, tap-major columns."""
    n, c = xp.shape[0], xp.shape[3]
    cols = np.empty((n,) + tuple(out_hw) + (kh * kw * c,), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            t = (i * kw + j) * c
            cols[..., t : t + c] = xp[_tap(i, j, stride, out_hw)]
    return cols.reshape(-1, kh * kw * c)


def _col2im(cols: np.ndarray, kh: int, kw: int, stride: int, in_hw, out_hw, n: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add patch rows into an ``(N, H, W, C)`` array."""
    c = cols.shape[1] // (kh * kw)
    cols = cols.reshape((n,) + tuple(in_hw) + (kh * kw * c,))
    out = np.zeros((n,) + tuple(out_hw) + (c,), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            t = (i * kw + j) * c
            out[_tap(i, j, stride, in_hw)] += cols[..., t : t + c]
    return out


def conv2d(x, w, b, stride: int, pad) -> Tensor:
    """Cross-correlation, ``x`` (N, H, W, C), ``w`` (kh, kw, C, F).

    ``pad`` is ``(top, bottom, left, right)`` zero padding.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    top, bottom, left, right = pad
    kh, kw, c, f = w.shape
    xp = np.pad(x.value, ((0, 0), (top, bottom), (left, right), (0, 0)))
    n = xp.shape[0]
    out_hw = ((xp.shape[1] - kh) // stride + 1, (xp.shape[2] - kw) // stride + 1)
    cols = _im2col(xp, kh, kw, stride, out_hw)
    wm = w.value.reshape(-1, f)
    out = (cols @ wm).reshape((n,) + out_hw + (f,)) + b.value

    def backward(g):
        g2 = g.reshape(-1, f)
        gw = (cols.T @ g2).reshape(w.shape)
        gxp = _col2im(g2 @ wm.T, kh, kw, stride, out_hw, xp.shape[1:3], n)
        gx = gxp[:, top : xp.shape[1] - bottom, left : xp.shape[2] - right]
        return gx, gw, g2.sum(axis=0)

    return Tensor(out, parents=(x, w, b), backward_fn=backward)


def conv_transpose2d(x, w, b, stride: int, crop) -> Tensor:
    """Transposed convolution, ``x`` (N, H, W, Cin), ``w`` (kh, kw, Cout, Cin).

    The full output ``((H-1)*stride + kh, (W-1)*stride + kw)`` is cropped by
    ``(top, bottom, left, right)``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    top, bottom, left, right = crop
    kh, kw, cout, cin = w.shape
    n, h, wd, _ = x.shape
    full_hw = ((h - 1) * stride + kh, (wd - 1) * stride + kw)
    x2 = x.value.reshape(-1, cin)
    wm = w.value.reshape(-1, cin)  # (kh*kw*Cout, Cin)
    full = np.zeros((n,) + full_hw + (cout,), dtype=x2.dtype)
    for i in range(kh):
        for j in range(kw):
            full[_tap(i, j, stride, (h, wd))] += (x2 @ w.value[i, j].T).reshape(n, h, wd, cout)
    out = full[:, top : full_hw[0] - bottom, left : full_hw[1] - right] + b.value

    def backward(g):
        gfull = np.pad(g, ((0, 0), (top, bottom), (left, right), (0, 0)))
        gcols = _im2col(gfull, kh, kw, stride, (h, wd))
        gx = (gcols @ wm).reshape(x.shape)
        gw = (gcols.T @ x2).reshape(w.shape)
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return Tensor(out, parents=(x, w, b), backward_fn=backward)


class Adam:
    """Adam over a dict of numpy parameter arrays (updated in place)."""

    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            self.params[k] -= lr_t * self.m[k] / (np.sqrt(self.v[k]) + self.eps)
