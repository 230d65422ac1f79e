"""Synthetic ultrasound-like nodule phantoms and the dataset directory format.

Layout of a dataset directory::

    manifest.json        config, ids and train/test split
    images/<id>.pgm      8-bit grey image
    masks/<id>.pgm       ground truth (0 / 255)
    annotations.jsonl    one caliper annotation per id
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import AnnotationError, ConfigError, DegenerateSample, FormatError, TooThin
from .geometry import AspectAnnotation, annotation_from_mask, validate_annotation

MIN_GT_PIXELS = 16
MAX_ATTEMPTS = 64


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    n: int = 250
    seed: int = 0
    convex_only: bool = False
    star_harmonics: float = 0.15
    fg_level: float = 0.25
    bg_level: float = 0.55
    speckle_strength: float = 0.4
    aspect_range: tuple[float, float] = (1.0, 2.2)
    radius_range: tuple[float, float] = (0.12, 0.28)
    max_tilt_deg: float = 20.0  # major axis within this many degrees of horizontal or vertical
    test_fraction: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "aspect_range", tuple(float(v) for v in self.aspect_range))
        object.__setattr__(self, "radius_range", tuple(float(v) for v in self.radius_range))
        if self.size < 8 or self.size % 4:
            raise ConfigError(f"size must be a multiple of 4 and >= 8, got {self.size}")
        if self.n < 0:
            raise ConfigError("n must be non-negative")
        lo, hi = self.aspect_range
        if not 1.0 <= lo <= hi:
            raise ConfigError(f"aspect range must satisfy 1 <= lo <= hi, got {self.aspect_range}")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ConfigError("test_fraction must lie in [0, 1]")
        if not 0.0 <= self.max_tilt_deg <= 90.0:
            raise ConfigError("max_tilt_deg must lie in [0, 90]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspect_range"] = list(self.aspect_range)
        d["radius_range"] = list(self.radius_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known})


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray  # float32 (H, W), values k / 255
    gt: np.ndarray  # bool (H, W)
    ann: AspectAnnotation
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (self.id == other.id and self.ann == other.ann
                and self.image.dtype == other.image.dtype and np.array_equal(self.image, other.image)
                and np.array_equal(self.gt, other.gt))


def sample_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index), int(attempt)])))


def sample_id(index: int) -> str:
    return f"s{index:05d}"


def _box3(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="reflect")
    h, w = a.shape
    return sum(p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)) / 9.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid used on disk, so files round-trip bit-exactly."""
    q = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return (q.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def _nodule(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    s = cfg.size
    r0 = rng.uniform(*cfg.radius_range) * s
    amps = np.zeros(3) if cfg.convex_only else rng.uniform(-cfg.star_harmonics, cfg.star_harmonics, size=3)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    aspect = rng.uniform(*cfg.aspect_range)
    rot = math.radians(rng.uniform(-cfg.max_tilt_deg, cfg.max_tilt_deg)) + 0.5 * math.pi * rng.integers(0, 2)
    sq = math.sqrt(aspect)
    extent = r0 * (1.0 + np.abs(amps).sum()) * sq
    limit = 0.5 * s - 2.0
    if extent > limit:
        r0 *= limit / extent
        extent = limit
    lo = max(0.25 * s, extent + 2.0)
    hi = min(0.75 * s, s - extent - 2.0)
    cx, cy = (rng.uniform(lo, hi, size=2) if hi > lo else np.array([0.5 * s, 0.5 * s]))
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    dx, dy = xs + 0.5 - cx, ys + 0.5 - cy
    c, si = math.cos(rot), math.sin(rot)
    u = (c * dx + si * dy) / sq
    v = (-si * dx + c * dy) * sq
    rho = np.hypot(u, v)
    th = np.arctan2(v, u)
    r = r0 * (1.0 + sum(a * np.cos(j * th + ph) for j, a, ph in zip((2, 3, 4), amps, phases)))
    meta = {"r0": r0, "aspect": aspect, "rotation": rot, "center": [cx, cy], "harmonics": amps.tolist()}
    return rho < r, meta


def synth_sample(cfg: SynthConfig, index: int) -> SampleRecord:
    """Deterministic phantom for ``(cfg.seed, index)``; rejected draws move to the next substream."""
    last = None
    for attempt in range(MAX_ATTEMPTS):
        rng = sample_rng(cfg.seed, index, attempt)
        gt, meta = _nodule(cfg, rng)
        try:
            if gt.sum() < MIN_GT_PIXELS:
                raise DegenerateSample(f"nodule has {int(gt.sum())} px")
            ann = validate_annotation(annotation_from_mask(gt))
        except (DegenerateSample, TooThin, AnnotationError) as exc:
            last = exc
            continue
        z = rng.standard_normal((cfg.size, cfg.size))
        z = _box3(_box3(z))
        z = (z - z.mean()) / z.std()
        base = np.where(gt, cfg.fg_level, cfg.bg_level)
        img = quantize(np.clip(base * (1.0 + cfg.speckle_strength * z), 0.0, 1.0))
        meta["attempt"] = attempt
        return SampleRecord(sample_id(index), img, gt, ann, meta)
    raise DegenerateSample(f"sample {index}: no valid phantom after {MAX_ATTEMPTS} attempts ({last})")


def make_dataset(cfg: SynthConfig) -> list[SampleRecord]:
    return [synth_sample(cfg, i) for i in range(cfg.n)]


def split_indices(n: int, seed: int, test_fraction: float) -> tuple[list[int], list[int]]:
    """Disjoint, exhaustive train/test index lists, a pure function of its arguments."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ConfigError("test_fraction must lie in [0, 1]")
    perm = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5B17]))).permutation(n)
    n_test = int(round(n * test_fraction))
    return sorted(perm[n_test:].tolist()), sorted(perm[:n_test].tolist())


def write_dataset(directory, records, config: SynthConfig | None = None,
                  split: tuple[list[int], list[int]] | None = None) -> None:
    records = list(records)
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for rec in records:
        io.write_image(root / "images" / f"{rec.id}.pgm", rec.image)
        io.write_mask(root / "masks" / f"{rec.id}.pgm", rec.gt)
    io.write_annotations(root / "annotations.jsonl", [(rec.id, rec.ann) for rec in records])
    ids = [rec.id for rec in records]
    manifest = {"ids": ids, "config": config.to_dict() if config else None}
    if split is not None:
        manifest["split"] = {"train": [ids[i] for i in split[0]], "test": [ids[i] for i in split[1]]}
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, root / "manifest.json")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc


def read_dataset(directory) -> list[SampleRecord]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    manifest = read_manifest(root)
    if "ids" in manifest:
        ids = list(manifest["ids"])
    else:
        img_dir = root / "images"
        ids = sorted(p.stem for p in img_dir.glob("*.pgm")) if img_dir.is_dir() else []
    if not ids:
        return []
    ann_path = root / "annotations.jsonl"
    anns = dict(io.read_annotations(ann_path)) if ann_path.exists() else {}
    out = []
    for ident in ids:
        if ident not in anns:
            raise FormatError(f"no annotation line for image id {ident!r}")
        img = io.read_image(root / "images" / f"{ident}.pgm")
        gt = io.read_mask(root / "masks" / f"{ident}.pgm")
        if img.shape != gt.shape:
            raise FormatError(f"{ident}: image {img.shape} and mask {gt.shape} differ in size")
        out.append(SampleRecord(ident, img, gt, anns[ident]))
    return out


def dataset_split(directory, records: list[SampleRecord]) -> tuple[list[SampleRecord], list[SampleRecord]]:
    """Train/test records per the manifest split (everything is training data without one)."""
    split = read_manifest(directory).get("split")
    if not split:
        return list(records), []
    by_id = {r.id: r for r in records}
    try:
        return [by_id[i] for i in split["train"]], [by_id[i] for i in split["test"]]
    except KeyError as exc:
        raise FormatError(f"split refers to unknown id {exc}") from exc
