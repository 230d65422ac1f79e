"""Dual-network co-training with asymmetric supervision, mixed pseudo-labels and
the axis-projection prior, plus evaluation and the annotation-noise sweep."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses as L
from .diffcore import NetConfig, ParamStore, backward, forward, init_params, poly_lr, save_checkpoint, sgd_step
from .errors import ConfigError, EmptyDataset, NonFiniteLoss, ShapeMismatch, ShapeOutOfBoundsWarning
from .geometry import ShapeKind, generate_pseudo_label, perturb_annotation, rasterize_cross
from .metrics import MetricReport, evaluate_pair, summarize, write_report
from .runtime import thread_limit

log = logging.getLogger(__name__)

LOG_FIELDS = ("iter", "lr", "l_sup", "l_idmps", "l_cap", "l_total")
EVAL_MODES = ("ensemble", "con", "rad")


@dataclass(frozen=True)
class TrainConfig:
    iters: int = 2000
    batch: int = 8
    crop: int = 64
    alpha: float = 3.0
    lambda2: float = 0.3
    lambda1_max: float = 1.0
    rampup_len: int | None = None
    lr0: float = 0.01
    lr_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    shape_con: str = "quadrilateral"
    shape_rad: str = "ellipse"
    eval_mode: str = "ensemble"
    idmps: bool = True
    crbs: bool = True
    cap: bool = True
    pairing: str = "cross"
    beta: float | None = None  # None: one uniform draw per image per iteration
    depth: int = 2
    base_channels: int = 8
    ckpt_every: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.iters < 1 or self.batch < 1:
            raise ConfigError("iters and batch must be positive")
        if self.crop % (2 ** self.depth):
            raise ConfigError(f"crop {self.crop} must be divisible by 2^depth = {2 ** self.depth}")
        if not ShapeKind.parse(self.shape_con).conservative:
            raise ConfigError(f"shape_con must be a conservative kind, got {self.shape_con}")
        if not ShapeKind.parse(self.shape_rad).radical:
            raise ConfigError(f"shape_rad must be a radical kind, got {self.shape_rad}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if self.pairing not in ("cross", "direct"):
            raise ConfigError("pairing must be 'cross' or 'direct'")
        if self.alpha < 1:
            raise ConfigError("alpha must be >= 1")
        if self.beta is not None and not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")

    @property
    def net(self) -> NetConfig:
        return NetConfig(depth=self.depth, base_channels=self.base_channels)

    @property
    def loss_weights(self) -> L.LossWeights:
        return L.LossWeights(alpha=self.alpha, lambda2=self.lambda2, lambda1_max=self.lambda1_max,
                             rampup_len=self.rampup_len or self.iters)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params_con: ParamStore
    params_rad: ParamStore
    log: list[dict] = field(default_factory=list)


@dataclass
class TrainingData:
    images: np.ndarray  # (n, H, W) float32, standardized
    y_con: np.ndarray  # (n, H, W) bool
    y_rad: np.ndarray
    cross: np.ndarray
    ids: list[str]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x7A11, int(stream)])))


def standardize(images: np.ndarray) -> np.ndarray:
    """Per-image zero mean, unit variance network input (constant images map to zeros)."""
    a = np.asarray(images, dtype=np.float64)
    mu = a.mean(axis=(-2, -1), keepdims=True)
    sd = a.std(axis=(-2, -1), keepdims=True)
    return ((a - mu) / np.where(sd > 0, sd, 1.0)).astype(np.float32)


def prepare(records, shape_con="quadrilateral", shape_rad="ellipse") -> TrainingData:
    """Stack images with their pseudo-label pair and annotation cross."""
    records = list(records)
    if not records:
        raise EmptyDataset("training needs at least one record")
    kc, kr = ShapeKind.parse(shape_con), ShapeKind.parse(shape_rad)
    imgs, yc, yr, cr = [], [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShapeOutOfBoundsWarning)
        for rec in records:
            grid = rec.image.shape
            imgs.append(np.asarray(rec.image, dtype=np.float32))
            yc.append(generate_pseudo_label(rec.ann, kc, grid))
            yr.append(generate_pseudo_label(rec.ann, kr, grid))
            cr.append(rasterize_cross(rec.ann, grid))
    shapes = {a.shape for a in imgs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"training images differ in size: {sorted(shapes)}")
    return TrainingData(standardize(np.stack(imgs)), np.stack(yc), np.stack(yr), np.stack(cr), [r.id for r in records])


def augment(arrays: Sequence[np.ndarray], k: int, flip_h: bool, flip_v: bool) -> list[np.ndarray]:
    """Same lossless rot90/flip for every ``(H, W)`` array."""
    out = []
    for a in arrays:
        a = np.rot90(a, k)
        if flip_h:
            a = a[:, ::-1]
        if flip_v:
            a = a[::-1, :]
        out.append(np.ascontiguousarray(a))
    return out


def _batch(data: TrainingData, rng: np.random.Generator, cfg: TrainConfig):
    n, h, w = data.images.shape
    idx = rng.choice(n, size=cfg.batch, replace=n < cfg.batch)
    crop = min(cfg.crop, h, w)
    xs, ycs, yrs, crs = [], [], [], []
    for i in idx:
        k = int(rng.integers(4))
        fh, fv = bool(rng.integers(2)), bool(rng.integers(2))
        r0 = int(rng.integers(h - crop + 1)) if h > crop else 0
        c0 = int(rng.integers(w - crop + 1)) if w > crop else 0
        win = (slice(r0, r0 + crop), slice(c0, c0 + crop))
        x, yc, yr, cr = augment([data.images[i][win], data.y_con[i][win], data.y_rad[i][win], data.cross[i][win]],
                                k, fh, fv)
        xs.append(x)
        ycs.append(yc)
        yrs.append(yr)
        crs.append(cr)
    return np.stack(xs)[:, None], np.stack(ycs), np.stack(yrs), np.stack(crs)


def _write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(LOG_FIELDS)
        for row in rows:
            wr.writerow([row["iter"]] + [format(row[k], ".10g") for k in LOG_FIELDS[1:]])


def _save(out: Path, cfg: TrainConfig, con: ParamStore, rad: ParamStore, it: int, suffix: str = ""):
    save_checkpoint(out / f"con{suffix}.ckpt", {"con": con}, cfg.to_dict(), it)
    save_checkpoint(out / f"rad{suffix}.ckpt", {"rad": rad}, cfg.to_dict(), it)


def train(cfg: TrainConfig, dataset, out_dir=None) -> TrainResult:
    """Train the conservative-side and radical-side networks jointly.

    ``dataset`` is a sequence of records (``image``, ``ann``) or a prepared
    ``TrainingData``. With ``out_dir`` the log CSV and checkpoints are written there.
    """
    data = dataset if isinstance(dataset, TrainingData) else prepare(dataset, cfg.shape_con, cfg.shape_rad)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    weights = cfg.loss_weights
    alpha = cfg.alpha if cfg.crbs else 1.0
    con = init_params(cfg.net, cfg.seed, tag="con")
    rad = init_params(cfg.net, cfg.seed, tag="rad")
    batch_rng = _rng(cfg.seed, 1)
    beta_rng = _rng(cfg.seed, 2)
    rows = []
    with thread_limit(cfg.threads):
        for it in range(cfg.iters):
            x, y_con, y_rad, cross = _batch(data, batch_rng, cfg)
            lr = poly_lr(it, cfg.iters, cfg.lr0, cfg.lr_power)
            p_con = forward(con, x)
            p_rad = forward(rad, x)
            l_sup = L.crbs_sup_loss(p_con, p_rad, y_rad, y_con, alpha, cfg.pairing)
            lam1 = L.lambda1_rampup(it, weights) if cfg.idmps else 0.0
            lam2 = cfg.lambda2 if cfg.cap else 0.0
            if cfg.beta is None:
                beta = beta_rng.uniform(0.0, 1.0, size=cfg.batch)
            else:
                beta = np.full(cfg.batch, cfg.beta)
            if cfg.idmps:
                m = L.inconsistency_mask(y_rad, y_con)
                y_pl = L.mix_pseudo_label(p_con, p_rad, beta)
                l_idmps = L.idmps_loss(p_con, p_rad, y_pl, m)
            else:
                l_idmps = 0.0
            l_cap = L.cap_total(p_con, p_rad, cross) if cfg.cap else 0.0
            total = L.total_loss(l_sup, l_idmps, l_cap, lam1, lam2)
            row = {"iter": it, "lr": lr, "l_sup": float(l_sup.data), "l_total": float(total.data),
                   "l_idmps": float(getattr(l_idmps, "data", l_idmps)), "l_cap": float(getattr(l_cap, "data", l_cap))}
            rows.append(row)
            if not all(math.isfinite(row[k]) for k in LOG_FIELDS[1:]):
                if out is not None:
                    _write_log(out / "train_log.csv", rows)
                    _save(out, cfg, con, rad, it, suffix="_nonfinite")
                raise NonFiniteLoss(f"non-finite loss at iteration {it}: {row}")
            g_con, g_rad = backward(total, con, rad)
            sgd_step(con, g_con, lr, cfg.momentum, cfg.weight_decay)
            sgd_step(rad, g_rad, lr, cfg.momentum, cfg.weight_decay)
            if out is not None and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0:
                _save(out, cfg, con, rad, it + 1)
            if (it + 1) % 100 == 0:
                log.info("iter %d  lr %.5f  total %.4f", it + 1, lr, row["l_total"])
    if out is not None:
        _write_log(out / "train_log.csv", rows)
        _save(out, cfg, con, rad, cfg.iters)
    return TrainResult(con, rad, rows)


def predict(params_con: ParamStore | None, params_rad: ParamStore | None, images: np.ndarray,
            mode: str = "ensemble", chunk: int = 16) -> np.ndarray:
    """Boolean foreground masks ``(n, H, W)`` for raw images; ties go to background."""
    if mode not in EVAL_MODES:
        raise ConfigError(f"eval mode must be one of {EVAL_MODES}, got {mode!r}")
    nets = {"ensemble": [params_con, params_rad], "con": [params_con], "rad": [params_rad]}[mode]
    if any(p is None for p in nets):
        raise ConfigError(f"mode {mode!r} needs {'both networks' if mode == 'ensemble' else 'the ' + mode + ' network'}")
    imgs = standardize(images)
    out = []
    for s in range(0, imgs.shape[0], chunk):
        x = imgs[s:s + chunk, None]
        probs = [forward(p, x, requires_grad=False).data for p in nets]
        prob = probs[0] if len(probs) == 1 else 0.5 * (probs[0] + probs[1])
        out.append(prob[:, 1] > prob[:, 0])
    return np.concatenate(out) if out else np.zeros((0,) + imgs.shape[1:], dtype=bool)


def evaluate(params_con, params_rad, dataset, mode: str = "ensemble", report_path=None,
             threads: int | None = None) -> tuple[list[tuple[str, MetricReport]], MetricReport]:
    """Per-image metrics and their mean; optionally written as a CSV report."""
    records = list(dataset)
    if not records:
        raise EmptyDataset("evaluation needs at least one record")
    with thread_limit(threads):
        preds = predict(params_con, params_rad, np.stack([r.image for r in records]), mode)
    rows = [(r.id, evaluate_pair(p, r.gt)) for r, p in zip(records, preds)]
    if report_path is not None:
        mean, _ = write_report(report_path, rows)
    else:
        mean, _ = summarize([r for _, r in rows])
    return rows, mean


def baseline_modes(pairing: str = "cross") -> dict[str, str]:
    """Which network of an all-off run is the single-label baseline for each label type."""
    if pairing == "cross":
        return {"radical_only": "con", "conservative_only": "rad"}
    return {"radical_only": "rad", "conservative_only": "con"}


def perturb_dataset(records, degrees: float):
    """Rigidly rotate every annotation, alternating the direction from image to image."""
    out = []
    for i, rec in enumerate(records):
        ann = perturb_annotation(rec.ann, degrees, 1 if i % 2 == 0 else -1)
        out.append(replace(rec, ann=ann))
    return out


def noise_sweep(cfg: TrainConfig, train_records, test_records, degrees: Sequence[float],
                seeds: Sequence[int] | None = None, mode: str | None = None) -> dict[float, float]:
    """Mean test DSC per perturbation level, averaged over ``seeds``."""
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    out = {}
    for deg in degrees:
        noisy = perturb_dataset(train_records, deg)
        scores = []
        for s in seeds:
            res = train(replace(cfg, seed=s), noisy)
            _, mean = evaluate(res.params_con, res.params_rad, test_records, mode or cfg.eval_mode, threads=cfg.threads)
            scores.append(mean.dsc)
        out[float(deg)] = float(np.mean(scores))
    return out
