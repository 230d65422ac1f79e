"""Differentiable ops on ``(N, C, H, W)`` tensors."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ShapeMismatch
from .tensor import Tensor, make


def pad1(a: np.ndarray) -> np.ndarray:
    n, c, h, w = a.shape
    out = np.zeros((n, c, h + 2, w + 2), dtype=a.dtype)
    out[:, :, 1:-1, 1:-1] = a
    return out


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 3x3 convolution (cross-correlation), zero padding."""
    xd = x.data
    if xd.ndim != 4 or xd.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"conv3x3: input {xd.shape} does not match weight {w.data.shape}")
    xp = pad1(xd)
    y = kernels.conv3x3_forward(xp, w.data, b.data)

    def grad_fn(g):
        gx = kernels.conv3x3_grad_input(g, w.data) if x.requires_grad else None
        gw = kernels.conv3x3_grad_weight(xp, g) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return gx, gw, gb

    return make(y, (x, w, b), grad_fn)


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise channel mixing; ``w`` has shape ``(Co, Ci)``."""
    xd = x.data
    n, ci, h, wd = xd.shape
    if ci != w.data.shape[1]:
        raise ShapeMismatch(f"conv1x1: input {xd.shape} does not match weight {w.data.shape}")
    xf = xd.reshape(n, ci, h * wd)
    y = np.matmul(w.data, xf) + b.data[None, :, None]

    def grad_fn(g):
        gf = g.reshape(n, -1, h * wd)
        gx = np.matmul(w.data.T, gf).reshape(xd.shape) if x.requires_grad else None
        gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0) if w.requires_grad else None
        gb = gf.sum(axis=(0, 2)) if b.requires_grad else None
        return gx, gw, gb

    return make(y.reshape(n, -1, h, wd), (x, w, b), grad_fn)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    y = np.maximum(x.data, x.data.dtype.type(0))
    return make(y, (x,), lambda g: (g * pos,), name="relu")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Ties route the gradient to the first maximum in row-major order."""
    xd = x.data
    h, w = xd.shape[2:]
    if h % 2 or w % 2:
        raise ShapeMismatch(f"maxpool2 needs even spatial size, got {h}x{w}")
    quads = [xd[:, :, 0::2, 0::2], xd[:, :, 0::2, 1::2], xd[:, :, 1::2, 0::2], xd[:, :, 1::2, 1::2]]
    y = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def grad_fn(g):
        gx = np.zeros_like(xd, dtype=g.dtype)
        taken = np.zeros(y.shape, dtype=bool)
        for (dy, dx), q in zip(((0, 0), (0, 1), (1, 0), (1, 1)), quads):
            hit = (q == y) & ~taken
            taken |= hit
            gx[:, :, dy::2, dx::2] = g * hit
        return (gx,)

    return make(y, (x,), grad_fn, name="maxpool2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    n, c, h, w = x.data.shape
    y = np.empty((n, c, 2 * h, 2 * w), dtype=x.data.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            y[:, :, dy::2, dx::2] = x.data

    def grad_fn(g):
        return ((g[:, :, 0::2, 0::2] + g[:, :, 0::2, 1::2]) + (g[:, :, 1::2, 0::2] + g[:, :, 1::2, 1::2]),)

    return make(y, (x,), grad_fn)


def concat(xs: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    sizes = [t.data.shape[1] for t in xs]
    y = np.concatenate([t.data for t in xs], axis=1)
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return make(y, tuple(xs), grad_fn)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the channel axis."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return make(p, (x,), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")
    return make(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, k: float) -> Tensor:
    k = a.data.dtype.type(k)
    return make(a.data * k, (a,), lambda g: (g * k,))


def weighted_sum(terms: list[tuple[float, Tensor]]) -> Tensor:
    """Scalar combination ``sum(k * t)`` of same-shape tensors."""
    dtype = terms[0][1].data.dtype
    ks = [dtype.type(k) for k, _ in terms]
    y = sum(k * t.data for k, (_, t) in zip(ks, terms))
    return make(np.asarray(y, dtype=dtype), tuple(t for _, t in terms), lambda g: tuple(g * k for k in ks))
