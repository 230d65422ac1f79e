"""Finite-difference check of every parameter gradient of the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .diffcore import NetConfig, backward, forward, init_params
from .diffcore.tensor import _topo
from .geometry import generate_pseudo_label, rasterize_cross
from .synthdata import SynthConfig, synth_sample

TERMS = ("sup", "idmps", "cap", "total")
GRAD_FLOOR = 1e-6  # below this the difference quotient is roundoff-limited; compare absolutely


@dataclass
class GradcheckResult:
    max_rel_error: dict[str, float]
    num_params: int
    shrunk: int = 0  # parameters whose step was reduced to stay off a kink
    unresolved: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _problem(size: int, batch: int, seed: int):
    cfg = SynthConfig(size=size, n=batch, seed=seed, radius_range=(0.25, 0.35))
    recs = [synth_sample(cfg, i) for i in range(batch)]
    x = np.stack([r.image for r in recs])[:, None].astype(np.float64)
    x = (x - x.mean(axis=(2, 3), keepdims=True)) / x.std(axis=(2, 3), keepdims=True)
    y_con = np.stack([generate_pseudo_label(r.ann, "quadrilateral", (size, size)) for r in recs])
    y_rad = np.stack([generate_pseudo_label(r.ann, "ellipse", (size, size)) for r in recs])
    cross = np.stack([rasterize_cross(r.ann, (size, size)) for r in recs])
    return x, y_con, y_rad, cross


def _terms(con, rad, x, y_con, y_rad, cross, y_pl, m, alpha, lam1, lam2):
    p_con = forward(con, x)
    p_rad = forward(rad, x)
    sup = L.crbs_sup_loss(p_con, p_rad, y_rad, y_con, alpha)
    idm = L.idmps_loss(p_con, p_rad, y_pl, m)
    cap = L.cap_total(p_con, p_rad, cross)
    out = {"sup": sup, "idmps": idm, "cap": cap, "total": L.total_loss(sup, idm, cap, lam1, lam2)}
    return out, (p_con, p_rad)


def _pattern(probs) -> list[np.ndarray]:
    """Every discrete branch the objective took: ReLU signs, pooling winners,
    projection argmaxes and clamp activity."""
    sig = []
    for p in probs:
        for node in _topo(p):
            if node.name == "relu":
                sig.append(node.data > 0)
            elif node.name == "maxpool2":
                xd = node.parents[0].data
                q = np.stack([xd[:, :, 0::2, 0::2], xd[:, :, 0::2, 1::2], xd[:, :, 1::2, 0::2], xd[:, :, 1::2, 1::2]])
                sig.append(q.argmax(axis=0))
        fg = p.data[:, 1]
        sig += [fg.argmax(axis=1), fg.argmax(axis=2), p.data < L.EPS, p.data > 1 - L.EPS]
    return sig


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def check_gradients(eps: float = 1e-4, seed: int = 0, size: int = 16, batch: int = 2,
                    net: NetConfig = NetConfig(depth=1, base_channels=4),
                    alpha: float = 3.0, lambda1: float = 0.7, lambda2: float = 0.3,
                    max_shrink: int = 6) -> GradcheckResult:
    """Compare backprop against central differences for all parameters of both networks in float64.

    The mixed pseudo-label and inconsistency mask are computed once and held fixed. A
    difference whose two probes land on another ReLU/pooling/argmax/clamp branch than
    the base point does not estimate the derivative there; its step is quartered
    (up to ``max_shrink`` times) until both probes stay on the base branch.
    """
    con = init_params(net, seed, np.float64, tag="con")
    rad = init_params(net, seed, np.float64, tag="rad")
    rng = np.random.default_rng(seed)
    for store in (con, rad):
        # zero biases leave pre-activations exactly on ReLU kinks; check at a generic point
        for k, v in store.values.items():
            if k.endswith(".b"):
                v += rng.uniform(-0.1, 0.1, size=v.shape)
    x, y_con, y_rad, cross = _problem(size, batch, seed)
    beta = rng.uniform(size=batch)
    m = L.inconsistency_mask(y_rad, y_con)
    p0c = forward(con, x, requires_grad=False)
    p0r = forward(rad, x, requires_grad=False)
    y_pl = L.mix_pseudo_label(p0c, p0r, beta)
    args = (x, y_con, y_rad, cross, y_pl, m, alpha, lambda1, lambda2)

    base, probs = _terms(con, rad, *args)
    ref = _pattern(probs)
    analytic = {}
    for term in TERMS:
        base, _ = _terms(con, rad, *args)
        analytic[term] = backward(base[term], con, rad)

    worst = dict.fromkeys(TERMS, 0.0)
    shrunk = unresolved = 0
    for si, store in enumerate((con, rad)):
        for name, v in store.values.items():
            flat = v.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                h = eps
                for k in range(max_shrink + 1):
                    flat[j] = orig + h
                    up, pu = _terms(con, rad, *args)
                    flat[j] = orig - h
                    dn, pd = _terms(con, rad, *args)
                    flat[j] = orig
                    if _same(_pattern(pu), ref) and _same(_pattern(pd), ref):
                        break
                    if k == max_shrink:
                        unresolved += 1
                    else:
                        h *= 0.25
                shrunk += h != eps
                for term in TERMS:
                    num = (float(up[term].data) - float(dn[term].data)) / (2 * h)
                    ana = float(analytic[term][si][name].reshape(-1)[j])
                    worst[term] = max(worst[term], float(relative_error(np.array(ana), np.array(num))))
    return GradcheckResult(worst, con.num_params() + rad.num_params(), shrunk, unresolved)
