"""Loss terms of the asymmetric co-training objective.

Every loss takes class-probability maps ``(N, 2, H, W)`` (a single ``(2, H, W)``
map is promoted to a batch of one) either as numpy arrays or as graph Tensors,
and returns a scalar Tensor. Gradients are analytic and fused per loss. Batch
losses are means over batch items. Probabilities are clamped to
``[EPS, 1 - EPS]`` before any log; the clamp has zero gradient where active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, constant, make
from .diffcore.ops import weighted_sum
from .errors import ConfigError, LengthMismatch, ShapeMismatch

EPS = 1e-7
DICE_SMOOTH = 1e-6


@dataclass(frozen=True)
class ClassWeights:
    w0: float = 1.0
    w1: float = 1.0

    def __post_init__(self):
        if not (self.w0 > 0 and self.w1 > 0):
            raise ConfigError(f"class weights must be positive, got ({self.w0}, {self.w1})")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 3.0
    lambda2: float = 0.3
    lambda1_max: float = 1.0
    rampup_len: int | None = None  # None: the run's total iterations

    def __post_init__(self):
        if self.alpha < 1:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")


def _as_pred(pred) -> Tensor:
    t = pred if isinstance(pred, Tensor) else constant(np.asarray(pred, dtype=np.float64))
    if t.data.ndim == 3:
        inner = t
        t = make(inner.data[None], (inner,), lambda g: (g[0],))
    if t.data.ndim != 4 or t.data.shape[1] != 2:
        raise ShapeMismatch(f"expected probabilities (N, 2, H, W), got {t.data.shape}")
    return t


def _as_mask(m, pred: Tensor, what: str) -> np.ndarray:
    a = np.asarray(m.data if isinstance(m, Tensor) else m)
    if a.ndim == 2:
        a = a[None]
    n, _, h, w = pred.data.shape
    if a.shape != (n, h, w):
        raise ShapeMismatch(f"{what} has shape {a.shape}, expected {(n, h, w)}")
    return a.astype(bool)


def _fused(pred: Tensor, value: float, dpred: np.ndarray) -> Tensor:
    dt = pred.data.dtype
    return make(np.asarray(value, dtype=dt), (pred,), lambda g: (dpred.astype(dt, copy=False) * g,))


def _target_logprob(p: np.ndarray, target: np.ndarray):
    """Clamped probability of the target class, its log, and the clamp-pass mask."""
    pt = np.where(target, p[:, 1], p[:, 0])
    live = (pt > EPS) & (pt < 1 - EPS)
    pc = np.clip(pt, EPS, 1 - EPS)
    return pc, np.log(pc), live


def _scatter(target: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = np.zeros(target.shape[:1] + (2,) + target.shape[1:], dtype=np.float64)
    out[:, 1] = np.where(target, g, 0.0)
    out[:, 0] = np.where(target, 0.0, g)
    return out


def weighted_ce(pred, target, weights: ClassWeights | tuple = ClassWeights()) -> Tensor:
    """Class-weighted cross-entropy, normalised by pixel count (then batch mean)."""
    if not isinstance(weights, ClassWeights):
        weights = ClassWeights(*weights)
    pt = _as_pred(pred)
    q = _as_mask(target, pt, "target")
    p = pt.data.astype(np.float64)
    n, _, h, w = p.shape
    pc, logp, live = _target_logprob(p, q)
    wk = np.where(q, weights.w1, weights.w0)
    value = float(-(wk * logp).sum(axis=(1, 2)).mean() / (h * w))
    d = np.where(live, -wk / pc, 0.0) / (n * h * w)
    return _fused(pt, value, _scatter(q, d))


def crbs_sup_loss(pred_con, pred_rad, y_rad, y_con, alpha: float, pairing: str = "cross") -> Tensor:
    """Asymmetric supervised term.

    ``pairing="cross"`` trains the conservative-side network on the radical label with
    background weight ``alpha`` and the radical-side network on the conservative label
    with foreground weight ``alpha``. ``pairing="direct"`` swaps the labels while keeping
    the weights attached to the networks.
    """
    if alpha < 1:
        raise ConfigError(f"alpha must be >= 1, got {alpha}")
    if pairing == "cross":
        t_con, t_rad = y_rad, y_con
    elif pairing == "direct":
        t_con, t_rad = y_con, y_rad
    else:
        raise ConfigError(f"unknown pairing {pairing!r}")
    a = weighted_ce(pred_con, t_con, ClassWeights(alpha, 1.0))
    b = weighted_ce(pred_rad, t_rad, ClassWeights(1.0, alpha))
    return weighted_sum([(1.0, a), (1.0, b)])


def inconsistency_mask(y_rad, y_con) -> np.ndarray:
    a, b = np.asarray(y_rad, dtype=bool), np.asarray(y_con, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"label shapes differ: {a.shape} vs {b.shape}")
    return a ^ b


def _probs(x) -> np.ndarray:
    a = np.asarray(x.data if isinstance(x, Tensor) else x)
    return a[None] if a.ndim == 3 else a


def mix_pseudo_label(pred_con, pred_rad, beta) -> np.ndarray:
    """Hard label from the beta-blend of two probability maps; ties go to background.

    ``beta`` is a scalar or one value per batch item. The result is a plain boolean
    array ``(N, H, W)`` and never carries a gradient.
    """
    pc, pr = _probs(pred_con), _probs(pred_rad)
    if pc.shape != pr.shape or pc.ndim != 4 or pc.shape[1] != 2:
        raise ShapeMismatch(f"probability maps differ: {pc.shape} vs {pr.shape}")
    b = np.asarray(beta, dtype=pc.dtype)
    if b.ndim == 1:
        if b.shape[0] != pc.shape[0]:
            raise ShapeMismatch(f"{b.shape[0]} betas for {pc.shape[0]} images")
        b = b[:, None, None, None]
    if np.any(b < 0) or np.any(b > 1):
        raise ConfigError("beta must lie in [0, 1]")
    mixed = b * pc + (1 - b) * pr
    return mixed[:, 1] > mixed[:, 0]


def masked_ce(pred, target, mask) -> Tensor:
    """Cross-entropy restricted to ``mask``, normalised by ``max(1, mask.sum())`` per image."""
    pt = _as_pred(pred)
    q = _as_mask(target, pt, "target")
    m = _as_mask(mask, pt, "mask")
    p = pt.data.astype(np.float64)
    n = p.shape[0]
    pc, logp, live = _target_logprob(p, q)
    norm = np.maximum(1.0, m.sum(axis=(1, 2)))[:, None, None]
    value = float((-(np.where(m, logp, 0.0)) / norm).sum(axis=(1, 2)).mean())
    d = np.where(m & live, -1.0 / pc, 0.0) / (norm * n)
    return _fused(pt, value, _scatter(q, d))


def idmps_loss(pred_con, pred_rad, y_pl, m) -> Tensor:
    return weighted_sum([(1.0, masked_ce(pred_rad, y_pl, m)), (1.0, masked_ce(pred_con, y_pl, m))])


def axis_projection_pred(pred) -> tuple[np.ndarray, np.ndarray]:
    """Foreground max-projections ``(proj_x, proj_y)``: per column (length W) and per row (length H)."""
    fg = _probs(pred)[:, 1]
    px, py = fg.max(axis=1), fg.max(axis=2)
    if np.asarray(pred.data if isinstance(pred, Tensor) else pred).ndim == 3:
        return px[0], py[0]
    return px, py


def axis_projection_annotation(cross) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(cross, dtype=bool)
    return c.any(axis=-2), c.any(axis=-1)


def _dice_terms(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Soft dice loss over the last axis and its gradient w.r.t. ``p``."""
    value = np.zeros(p.shape[:-1])
    grad = np.zeros(p.shape)
    for pk, qk, sign in ((p, q, 1.0), (1.0 - p, 1.0 - q, -1.0)):
        num = 2.0 * (pk * qk).sum(axis=-1) + DICE_SMOOTH
        den = pk.sum(axis=-1) + qk.sum(axis=-1) + DICE_SMOOTH
        value += 0.5 * (1.0 - num / den)
        ddice = (2.0 * qk * den[..., None] - num[..., None]) / (den[..., None] ** 2)
        grad += -0.5 * sign * ddice
    return value, grad


def soft_dice_loss(pred_vec, target_vec) -> Tensor:
    """Two-class soft dice loss of a probability vector against a binary vector."""
    pt = pred_vec if isinstance(pred_vec, Tensor) else constant(np.asarray(pred_vec, dtype=np.float64))
    q = np.asarray(target_vec, dtype=np.float64)
    if pt.data.shape != q.shape or pt.data.ndim != 1:
        raise LengthMismatch(f"vector lengths differ: {pt.data.shape} vs {q.shape}")
    value, g = _dice_terms(pt.data.astype(np.float64), q)
    return _fused(pt, float(value), g)


def cap_loss(pred, cross) -> Tensor:
    """Dice agreement of foreground max-projections with the annotation cross projections."""
    pt = _as_pred(pred)
    c = _as_mask(cross, pt, "cross")
    fg = pt.data[:, 1].astype(np.float64)
    n, h, w = fg.shape
    cx, cy = c.any(axis=1).astype(np.float64), c.any(axis=2).astype(np.float64)
    rx = fg.argmax(axis=1)  # (n, w): row of the column maximum
    cyi = fg.argmax(axis=2)  # (n, h): column of the row maximum
    px = np.take_along_axis(fg, rx[:, None, :], axis=1)[:, 0]
    py = np.take_along_axis(fg, cyi[:, :, None], axis=2)[:, :, 0]
    vx, gx = _dice_terms(px, cx)
    vy, gy = _dice_terms(py, cy)
    value = float((vx + vy).mean())
    d = np.zeros((n, 2, h, w))
    ii = np.arange(n)[:, None]
    np.add.at(d, (ii, 1, rx, np.arange(w)[None, :]), gx / n)
    np.add.at(d, (ii, 1, np.arange(h)[None, :], cyi), gy / n)
    return _fused(pt, value, d)


def cap_total(pred_con, pred_rad, cross) -> Tensor:
    return weighted_sum([(1.0, cap_loss(pred_con, cross)), (1.0, cap_loss(pred_rad, cross))])


def lambda1_rampup(it: int, cfg: LossWeights = LossWeights(), total: int | None = None) -> float:
    """Gaussian ramp-up ``lambda1_max * exp(-5 (1 - t/T)^2)``, flat after ``T``."""
    length = cfg.rampup_len if cfg.rampup_len is not None else total
    if not length:
        return cfg.lambda1_max
    t = min(max(it, 0), length) / length
    return cfg.lambda1_max * math.exp(-5.0 * (1.0 - t) ** 2)


def total_loss(l_sup, l_idmps, l_cap, lambda1: float, lambda2: float) -> Tensor:
    terms = []
    for k, term in ((1.0, l_sup), (lambda1, l_idmps), (lambda2, l_cap)):
        t = term if isinstance(term, Tensor) else constant(np.asarray(term, dtype=np.float64))
        terms.append((k, t))
    live = [t.data.dtype for _, t in terms if t.requires_grad]
    dt = live[0] if live else np.result_type(*[t.data.dtype for _, t in terms])
    terms = [(k, t if t.requires_grad or t.data.dtype == dt else constant(t.data.astype(dt))) for k, t in terms]
    return weighted_sum(terms)
