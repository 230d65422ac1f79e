"""Momentum SGD and the poly learning-rate schedule."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .net import ParamStore


def sgd_step(params: ParamStore, grads: dict[str, np.ndarray], lr: float, momentum: float = 0.9,
             weight_decay: float = 1e-4) -> ParamStore:
    """In-place update ``v = m*v + g + wd*w; w = w - lr*v``. Returns ``params``."""
    for name, w in params.values.items():
        g = grads.get(name)
        if g is None:
            raise ShapeMismatch(f"missing gradient for {name}")
        if g.shape != w.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        dt = w.dtype.type
        v = params.momentum[name]
        v *= dt(momentum)
        v += g.astype(w.dtype, copy=False)
        if weight_decay:
            v += dt(weight_decay) * w
        w -= dt(lr) * v
    return params


def poly_lr(it: int, total: int, lr0: float = 0.01, power: float = 0.9) -> float:
    if total <= 0 or not 0 <= it <= total:
        raise ValueError(f"poly_lr needs 0 <= iter <= total, got {it}/{total}")
    return lr0 * (1.0 - it / total) ** power
