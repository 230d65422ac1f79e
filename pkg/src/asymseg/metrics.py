"""Overlap and surface-distance metrics, and pseudo-label fidelity against ground truth."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import EmptyDataset, ShapeMismatch, ShapeOutOfBoundsWarning
from .geometry import ShapeKind, boundary_pixels, generate_pseudo_label

REPORT_FIELDS = ("dsc", "jaccard", "asd", "hd95", "precision", "recall")


@dataclass(frozen=True)
class MetricReport:
    dsc: float
    jaccard: float
    asd: float
    hd95: float
    precision: float
    recall: float


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def overlap_metrics(pred, gt) -> tuple[float, float, float, float]:
    """``(dsc, jaccard, precision, recall)`` with ``pred`` as A and ``gt`` as B."""
    a, b = _pair(pred, gt)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0, 1.0, 1.0, 1.0
    if na == 0 or nb == 0:
        return 0.0, 0.0, 0.0, 0.0
    inter = int(np.count_nonzero(a & b))
    union = na + nb - inter
    return 2.0 * inter / (na + nb), inter / union, inter / na, inter / nb


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance from every pixel center to the nearest foreground pixel center."""
    return np.sqrt(kernels.edt_squared(np.asarray(mask, dtype=bool)))


def _directed(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return distance_transform(dst)[src]


def percentile_linear(values, q: float) -> float:
    """``q``-th percentile by linear interpolation between the two bracketing order statistics.

    Position ``(n - 1) q / 100`` in the sorted values; evaluated as ``lo + (hi - lo) * frac``.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise EmptyDataset("percentile of an empty set")
    pos = (v.size - 1) * q / 100.0
    i = int(math.floor(pos))
    j = min(i + 1, v.size - 1)
    return float(v[i] + (v[j] - v[i]) * (pos - i))


def _mean(values: np.ndarray) -> float:
    # correctly rounded sum, so the value does not depend on summation order
    return math.fsum(values.tolist()) / values.size


def surface_metrics(pred, gt, symmetric_asd: bool = False) -> tuple[float, float]:
    """``(asd, hd95)`` between 4-connected boundaries.

    ASD is directed pred -> gt unless ``symmetric_asd``. HD95 is the linearly
    interpolated 95th percentile over both directed distance sets pooled together.
    """
    a, b = _pair(pred, gt)
    ba, bb = boundary_pixels(a), boundary_pixels(b)
    ea, eb = not ba.any(), not bb.any()
    if ea and eb:
        return 0.0, 0.0
    if ea or eb:
        diag = math.hypot(*a.shape)
        return diag, diag
    d_ab = _directed(ba, bb)
    d_ba = _directed(bb, ba)
    both = np.concatenate([d_ab, d_ba])
    asd = _mean(both) if symmetric_asd else _mean(d_ab)
    hd95 = percentile_linear(both, 95)
    return asd, hd95


def evaluate_pair(pred, gt) -> MetricReport:
    dsc, jac, prec, rec = overlap_metrics(pred, gt)
    asd, hd95 = surface_metrics(pred, gt)
    return MetricReport(dsc, jac, asd, hd95, prec, rec)


def summarize(reports: Sequence[MetricReport]) -> tuple[MetricReport, MetricReport]:
    """Per-field mean and population std."""
    if not reports:
        raise EmptyDataset("no reports to summarise")
    arr = np.array([astuple(r) for r in reports], dtype=np.float64)
    return MetricReport(*arr.mean(axis=0)), MetricReport(*arr.std(axis=0))


def _fmt(v: float) -> str:
    return format(float(v), ".10g")


def write_report(path, rows: Iterable[tuple[str, MetricReport]]) -> tuple[MetricReport, MetricReport]:
    rows = list(rows)
    mean, std = summarize([r for _, r in rows])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id",) + REPORT_FIELDS)
        for ident, rep in rows + [("mean", mean), ("std", std)]:
            w.writerow([ident] + [_fmt(getattr(rep, f.name)) for f in fields(MetricReport)])
    return mean, std


def read_report(path) -> dict[str, MetricReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: MetricReport(*(float(row[k]) for k in REPORT_FIELDS)) for row in csv.DictReader(fh)}


def shape_fidelity_table(dataset, kinds: Sequence = tuple(ShapeKind)) -> dict[ShapeKind, dict[str, float]]:
    """Mean pseudo-label precision/recall/dsc against ground truth, per shape kind.

    ``dataset`` yields records with ``gt`` and ``ann`` attributes.
    """
    records = list(dataset)
    if not records:
        raise EmptyDataset("shape fidelity needs at least one record")
    kinds = [ShapeKind.parse(k) for k in kinds]
    acc = {k: [] for k in kinds}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShapeOutOfBoundsWarning)
        for rec in records:
            gt = np.asarray(rec.gt, dtype=bool)
            for k in kinds:
                lab = generate_pseudo_label(rec.ann, k, gt.shape)
                dsc, _, prec, rec_ = overlap_metrics(lab, gt)
                acc[k].append((prec, rec_, dsc))
    out = {}
    for k, vals in acc.items():
        v = np.array(vals)
        out[k] = {"precision": float(v[:, 0].mean()), "recall": float(v[:, 1].mean()), "dsc": float(v[:, 2].mean())}
    return out
