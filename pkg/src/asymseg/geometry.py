"""Aspect-ratio annotations and the geometric pseudo-labels built from them.

Coordinates are pixel units with the origin at the top-left corner, ``x`` along
columns and ``y`` along rows. Pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)`` and
is rasterised by its center ``(c + 0.5, r + 0.5)``. Masks are ``(H, W)`` boolean
numpy arrays.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import (
    AngleOutOfRange,
    Degenerate,
    EmptyInput,
    EmptyMask,
    NonIntersecting,
    ShapeOutOfBounds,
    ShapeOutOfBoundsWarning,
    TooThin,
)

INTERSECT_TOL = 0.5
ANGLE_TOL_DEG = 15.0
MIN_AXIS_LEN = 2.0
ARC_SAMPLES = 32


class Point2(NamedTuple):
    x: float
    y: float


class ShapeKind(str, enum.Enum):
    QUADRILATERAL = "quadrilateral"
    CONCAVITY = "concavity"
    BOX = "box"
    ROTATED_RECT = "rotrect"
    CIRCLE = "circle"
    IRREGULAR_ELLIPSE = "ellipse"

    @property
    def conservative(self) -> bool:
        return self in (ShapeKind.QUADRILATERAL, ShapeKind.CONCAVITY)

    @property
    def radical(self) -> bool:
        return not self.conservative

    @classmethod
    def parse(cls, value) -> "ShapeKind":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"rotated_rect": "rotrect", "rectangle": "rotrect", "irregular_ellipse": "ellipse",
                   "quad": "quadrilateral"}
        v = aliases.get(v, v)
        for kind in cls:
            if kind.value == v or kind.name.lower() == v:
                return kind
        raise ValueError(f"unknown shape kind {value!r}; expected one of "
                         + ", ".join(k.value for k in cls))


def _pt(p) -> Point2:
    return Point2(float(p[0]), float(p[1]))


@dataclass(frozen=True)
class AspectAnnotation:
    """Two caliper segments: ``major`` (length axis) and ``minor`` (width axis).

    The longer segment is always stored as ``major``.
    """

    major: tuple[Point2, Point2]
    minor: tuple[Point2, Point2]

    def __post_init__(self):
        major = (_pt(self.major[0]), _pt(self.major[1]))
        minor = (_pt(self.minor[0]), _pt(self.minor[1]))
        if _seglen(minor) > _seglen(major):
            major, minor = minor, major
        object.__setattr__(self, "major", major)
        object.__setattr__(self, "minor", minor)

    @property
    def major_length(self) -> float:
        return _seglen(self.major)

    @property
    def minor_length(self) -> float:
        return _seglen(self.minor)

    def endpoints(self) -> np.ndarray:
        return np.array([self.major[0], self.major[1], self.minor[0], self.minor[1]], dtype=np.float64)

    def intersection(self) -> Point2:
        s, _ = _line_params(self)
        p0 = np.asarray(self.major[0])
        d1 = np.asarray(self.major[1]) - p0
        return _pt(p0 + s * d1)

    def to_json(self) -> dict:
        return {"major": [list(self.major[0]), list(self.major[1])],
                "minor": [list(self.minor[0]), list(self.minor[1])]}

    @classmethod
    def from_json(cls, obj) -> "AspectAnnotation":
        major, minor = obj["major"], obj["minor"]
        if len(major) != 2 or len(minor) != 2:
            raise ValueError("annotation axes need exactly two endpoints each")
        return cls((_pt(major[0]), _pt(major[1])), (_pt(minor[0]), _pt(minor[1])))


def _seglen(seg) -> float:
    return math.hypot(seg[1][0] - seg[0][0], seg[1][1] - seg[0][1])


def _line_params(ann: AspectAnnotation) -> tuple[float, float]:
    # major0 + s*d1 == minor0 + t*d2
    p = np.asarray(ann.major[0])
    q = np.asarray(ann.minor[0])
    d1 = np.asarray(ann.major[1]) - p
    d2 = np.asarray(ann.minor[1]) - q
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if denom == 0.0:
        raise NonIntersecting("annotation axes are parallel")
    w = q - p
    s = (w[0] * d2[1] - w[1] * d2[0]) / denom
    t = (w[0] * d1[1] - w[1] * d1[0]) / denom
    return float(s), float(t)


def validate_annotation(ann: AspectAnnotation) -> AspectAnnotation:
    """Check the caliper invariants and return the canonical annotation."""
    pts = ann.endpoints()
    if not np.all(np.isfinite(pts)):
        raise Degenerate("annotation endpoints must be finite")
    ann = AspectAnnotation(ann.major, ann.minor)
    l1, l2 = ann.major_length, ann.minor_length
    if l2 < MIN_AXIS_LEN:
        raise Degenerate(f"axis length {l2:.3f} px is below {MIN_AXIS_LEN} px")
    pts = ann.endpoints()
    d1 = pts[1] - pts[0]
    d2 = pts[3] - pts[2]
    cosang = abs(float(d1 @ d2)) / (l1 * l2)
    off = 90.0 - math.degrees(math.acos(min(1.0, cosang)))
    if off > ANGLE_TOL_DEG:
        raise AngleOutOfRange(f"axes are {off:.2f} deg away from perpendicular (limit {ANGLE_TOL_DEG})")
    s, t = _line_params(ann)
    if not (-INTERSECT_TOL <= s * l1 <= l1 + INTERSECT_TOL and -INTERSECT_TOL <= t * l2 <= l2 + INTERSECT_TOL):
        raise NonIntersecting("annotation axes do not cross within their extents")
    return ann


def _ordered_endpoints(ann: AspectAnnotation) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints sorted by the angle of their ray from the axis crossing, plus the crossing."""
    pts = ann.endpoints()
    c = np.asarray(ann.intersection())
    d1 = pts[1] - pts[0]
    d2 = pts[3] - pts[2]
    # ray directions rather than endpoint offsets: robust when a crossing sits on an endpoint
    rays = np.array([-d1, d1, -d2, d2])
    ang = np.arctan2(rays[:, 1], rays[:, 0])
    order = np.argsort(ang, kind="stable")
    return pts[order], c


def _arc_polygon(ends: np.ndarray, c: np.ndarray, samples: int = ARC_SAMPLES, reflect: bool = False) -> np.ndarray:
    t = np.arange(samples) * (0.5 * math.pi / samples)
    cos_t, sin_t = np.cos(t)[:, None], np.sin(t)[:, None]
    parts = []
    for k in range(4):
        ea, eb = ends[k], ends[(k + 1) % 4]
        arc = c + cos_t * (ea - c) + sin_t * (eb - c)
        if reflect:
            e = eb - ea
            e = e / math.hypot(e[0], e[1])
            rel = arc - ea
            arc = ea + 2.0 * (rel @ e)[:, None] * e - rel
        parts.append(arc)
    return np.concatenate(parts)


def _fill(poly: np.ndarray, height: int, width: int) -> np.ndarray:
    return kernels.fill_polygon(poly[:, 0], poly[:, 1], height, width).astype(bool)


def _centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs + 0.5, ys + 0.5


def endpoint_pixels(points: np.ndarray, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    cols = np.clip(np.floor(points[:, 0]).astype(np.int64), 0, width - 1)
    rows = np.clip(np.floor(points[:, 1]).astype(np.int64), 0, height - 1)
    return rows, cols


def _out_of_bounds(pts: np.ndarray, height: int, width: int) -> bool:
    return bool(np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > width)
                or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > height))


def generate_pseudo_label(ann: AspectAnnotation, kind, grid: tuple[int, int], strict: bool = False) -> np.ndarray:
    """Rasterise the ``kind`` pseudo-label of a validated annotation on an ``(H, W)`` grid.

    The four annotation endpoint pixels are always foreground. A shape whose boundary
    leaves the grid is clipped with a ``ShapeOutOfBoundsWarning``, or raises
    ``ShapeOutOfBounds`` when ``strict``.
    """
    kind = ShapeKind.parse(kind)
    height, width = int(grid[0]), int(grid[1])
    ends, c = _ordered_endpoints(ann)
    boundary = ends
    if kind is ShapeKind.QUADRILATERAL:
        mask = _fill(ends, height, width)
    elif kind is ShapeKind.IRREGULAR_ELLIPSE:
        boundary = _arc_polygon(ends, c)
        mask = _fill(boundary, height, width)
    elif kind is ShapeKind.CONCAVITY:
        # reflected arcs can poke past the chords near sharp endpoints; clip to the quadrilateral
        mask = _fill(_arc_polygon(ends, c, reflect=True), height, width) & _fill(ends, height, width)
    elif kind is ShapeKind.BOX:
        xc, yc = _centers(height, width)
        lo, hi = ends.min(axis=0), ends.max(axis=0)
        mask = (xc >= lo[0]) & (xc <= hi[0]) & (yc >= lo[1]) & (yc <= hi[1])
    elif kind is ShapeKind.ROTATED_RECT:
        u = np.asarray(ann.major[1]) - np.asarray(ann.major[0])
        u = u / math.hypot(u[0], u[1])
        v = np.array([-u[1], u[0]])
        rel = ends - c
        pu, pv = rel @ u, rel @ v
        xc, yc = _centers(height, width)
        qu = (xc - c[0]) * u[0] + (yc - c[1]) * u[1]
        qv = (xc - c[0]) * v[0] + (yc - c[1]) * v[1]
        eps = 1e-9
        mask = ((qu >= pu.min() - eps) & (qu <= pu.max() + eps)
                & (qv >= pv.min() - eps) & (qv <= pv.max() + eps))
        boundary = np.array([c + a * u + b * v for a in (pu.min(), pu.max()) for b in (pv.min(), pv.max())])
    elif kind is ShapeKind.CIRCLE:
        center, radius = min_enclosing_circle(ends)
        xc, yc = _centers(height, width)
        r2 = radius * radius
        mask = (xc - center.x) ** 2 + (yc - center.y) ** 2 <= r2 + 1e-9 * max(1.0, r2)
        boundary = np.array([[center.x - radius, center.y - radius], [center.x + radius, center.y + radius]])
    else:  # pragma: no cover - enum is closed
        raise ValueError(kind)

    if _out_of_bounds(boundary, height, width):
        msg = f"{kind.value} pseudo-label leaves the {height}x{width} grid; clipped"
        if strict:
            raise ShapeOutOfBounds(msg)
        warnings.warn(msg, ShapeOutOfBoundsWarning, stacklevel=2)
    rows, cols = endpoint_pixels(ends, height, width)
    mask[rows, cols] = True
    return mask


def _circle_two(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return cx, cy, math.hypot(a[0] - cx, a[1] - cy)


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        return None
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return ux, uy, max(math.hypot(ax - ux, ay - uy), math.hypot(bx - ux, by - uy), math.hypot(cx - ux, cy - uy))


def min_enclosing_circle(points: Sequence) -> tuple[Point2, float]:
    """Exact smallest enclosing circle of up to 8 points by candidate enumeration."""
    pts = [(float(p[0]), float(p[1])) for p in points]
    if not pts:
        raise EmptyInput("min_enclosing_circle needs at least one point")
    if len(pts) > 8:
        raise ValueError("min_enclosing_circle enumerates candidates; pass at most 8 points")
    if len(pts) == 1:
        return Point2(*pts[0]), 0.0
    candidates = [_circle_two(a, b) for a, b in itertools.combinations(pts, 2)]
    candidates += [c for c in (_circle_three(*t) for t in itertools.combinations(pts, 3)) if c is not None]
    best = None
    for cx, cy, r in candidates:
        tol = 1e-9 * max(1.0, r)
        if all(math.hypot(x - cx, y - cy) <= r + tol for x, y in pts):
            if best is None or r < best[2]:
                best = (cx, cy, r)
    return Point2(best[0], best[1]), best[2]


def _line_pixels(x0: int, y0: int, x1: int, y1: int):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield y0, x0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_segments(segments, grid: tuple[int, int]) -> np.ndarray:
    height, width = int(grid[0]), int(grid[1])
    mask = np.zeros((height, width), dtype=bool)
    for a, b in segments:
        x0, y0 = int(math.floor(a[0])), int(math.floor(a[1]))
        x1, y1 = int(math.floor(b[0])), int(math.floor(b[1]))
        for r, c in _line_pixels(x0, y0, x1, y1):
            if 0 <= r < height and 0 <= c < width:
                mask[r, c] = True
    return mask


def rasterize_cross(ann: AspectAnnotation, grid: tuple[int, int]) -> np.ndarray:
    """1-px Bresenham rasterisation of both caliper segments (the annotation cross)."""
    return rasterize_segments([ann.major, ann.minor], grid)


def perturb_annotation(ann: AspectAnnotation, degrees: float, direction: int = 1) -> AspectAnnotation:
    """Rotate both axes rigidly by ``direction * degrees`` about their crossing point."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    ann = validate_annotation(ann)
    if degrees == 0:
        return ann
    c = np.asarray(ann.intersection())
    th = math.radians(direction * degrees)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    pts = (ann.endpoints() - c) @ rot.T + c
    out = AspectAnnotation((_pt(pts[0]), _pt(pts[1])), (_pt(pts[2]), _pt(pts[3])))
    return validate_annotation(out)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the image border."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def segments_inside(mask: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised sampled inside test for segments ``a[k] -> b[k]`` (same rule as the chord kernels)."""
    h, w = mask.shape
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    n = np.maximum(np.ceil(np.sqrt(dx * dx + dy * dy) / 0.25).astype(np.int64) + 1, 2)
    ok = np.ones(a.shape[0], dtype=bool)
    for s in range(int(n.max()) if n.size else 0):
        live = s < n
        t = s / (n - 1).astype(np.float64)
        c = np.floor(a[:, 0] + dx * t).astype(np.int64)
        r = np.floor(a[:, 1] + dy * t).astype(np.int64)
        inb = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        val = np.zeros(a.shape[0], dtype=bool)
        val[inb] = mask[r[inb], c[inb]] != 0
        ok &= ~live | val
    return ok


def _near(values: np.ndarray, ref: float, gap: float) -> np.ndarray:
    """Members of the run of sorted ``values`` (steps <= gap) that contains ``ref``."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    split = np.flatnonzero(np.diff(v) > gap) + 1
    keep = np.zeros(values.size, dtype=bool)
    for run in np.split(order, split):
        if np.any(values[run] == ref):
            keep[run] = True
    return keep


def annotation_from_mask(gt: np.ndarray, perp_tol: float = 1.0, slack: float = 1.0) -> AspectAnnotation:
    """Derive the clinical caliper pair from a ground-truth mask.

    The major axis is the longest chord between boundary pixel centers that stays in
    the mask. The minor axis is the widest chord crossing it between boundary pixels
    whose positions along the major differ by at most ``perp_tol`` px; it is snapped
    to exact perpendicular. On a pixel lattice many chords tie within a pixel of the
    optimum, so each axis is the average of the inside chords within ``slack`` px of
    the optimum that sit next to it. Both axes are extended by half a pixel at each end
    so the calipers sit on the outer pixel edges.
    """
    m = np.asarray(gt, dtype=bool)
    if not m.any():
        raise EmptyMask("annotation_from_mask needs a non-empty mask")
    rows, cols = np.nonzero(boundary_pixels(m))
    pts = np.stack([cols + 0.5, rows + 0.5], axis=1)
    m8 = m.astype(np.uint8)
    i, j = kernels.longest_inside_chord(m8, pts)
    if i < 0:
        raise TooThin("mask has no chord between two boundary pixels")
    best = math.hypot(*(pts[j] - pts[i]))
    ii, jj = np.triu_indices(pts.shape[0], 1)
    lens = np.hypot(*(pts[jj] - pts[ii]).T)
    sel = lens >= best - slack
    a, b = pts[ii[sel]], pts[jj[sel]]
    flip = (b - a) @ (pts[j] - pts[i]) < 0
    a[flip], b[flip] = b[flip].copy(), a[flip].copy()
    sel = (np.max(np.abs(a - pts[i]), axis=1) <= 2.0 * slack + 1.0) & (np.max(np.abs(b - pts[j]), axis=1) <= 2.0 * slack + 1.0)
    a, b = a[sel], b[sel]
    ok = segments_inside(m8, a, b)
    p, q = a[ok].mean(axis=0), b[ok].mean(axis=0)
    length = math.hypot(q[0] - p[0], q[1] - p[1])
    u = (q - p) / length
    v = np.array([-u[1], u[0]])

    ia, ib = kernels.widest_cross_chord(m8, pts, p, u, length, perp_tol)
    if ia < 0:
        raise TooThin("mask has no chord crossing its major axis")
    rel = pts - p
    t, s = rel @ u, rel @ v
    width = s[ia] - s[ib]
    pos, neg = np.flatnonzero(s > 0), np.flatnonzero(s < 0)
    pi, nj = (x.ravel() for x in np.meshgrid(pos, neg, indexing="ij"))
    mid = 0.5 * (t[pi] + t[nj])
    keep = ((np.abs(t[pi] - t[nj]) <= perp_tol) & (mid >= 0.0) & (mid <= length)
            & (s[pi] - s[nj] >= width - slack))
    pi, nj, mid = pi[keep], nj[keep], mid[keep]
    ok = segments_inside(m8, pts[pi], pts[nj])
    pi, nj, mid = pi[ok], nj[ok], mid[ok]
    near = _near(mid, 0.5 * (t[ia] + t[ib]), 1.5)
    pi, nj, mid = pi[near], nj[near], mid[near]
    sa, sb = float(s[pi].mean()), float(s[nj].mean())
    if sa - sb + 1.0 < MIN_AXIS_LEN:
        raise TooThin(f"widest perpendicular chord spans {sa - sb + 1.0:.2f} px")
    foot = p + float(mid.mean()) * u
    major = (_pt(p - 0.5 * u), _pt(q + 0.5 * u))
    minor = (_pt(foot + (sa + 0.5) * v), _pt(foot + (sb - 0.5) * v))
    return AspectAnnotation(major, minor)
