"""Command-line entry point: ``asymseg <command> [flags]``.

Exit codes: 0 success, 1 invalid flags or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io, synthdata, trainer
from .diffcore import load_checkpoint
from .errors import AnnotationError, ConfigError, ShapeOutOfBoundsWarning
from .geometry import ShapeKind, generate_pseudo_label, validate_annotation
from .metrics import REPORT_FIELDS, read_report, shape_fidelity_table
from .runtime import ENV_THREADS, resolve_threads, thread_limit

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2

log = logging.getLogger("asymseg")


class UsageError(Exception):
    """Bad command line; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _kind(value: str) -> ShapeKind:
    try:
        return ShapeKind.parse(value)
    except (ValueError, KeyError):
        names = ", ".join(k.value for k in ShapeKind)
        raise argparse.ArgumentTypeError(f"unknown shape kind {value!r} (choose from {names})") from None


def _nonneg_int(value: str) -> int:
    v = int(value)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return v


def _pos_int(value: str) -> int:
    v = int(value)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return v


def _finite(value: str) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {value}")
    return v


def _need_dir(path: Path, flag: str) -> Path:
    if not path.is_dir():
        raise UsageError(f"{flag} {path}: no such dataset directory")
    return path


def _need_file(path: Path, flag: str) -> Path:
    if not path.is_file():
        raise UsageError(f"{flag} {path}: no such file")
    return path


def _clear_stale(root: Path, keep: set[str]) -> None:
    # overwrite semantics: drop images/masks of ids that are no longer in the dataset
    for sub in ("images", "masks"):
        d = root / sub
        if d.is_dir():
            for f in d.glob("*.pgm"):
                if f.stem not in keep:
                    f.unlink()


# commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cfg = synthdata.SynthConfig(size=args.size, n=args.n, seed=args.seed, convex_only=args.convex_only,
                                    test_fraction=args.test_fraction)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    records = synthdata.make_dataset(cfg)
    split = synthdata.split_indices(cfg.n, cfg.seed, cfg.test_fraction)
    _clear_stale(args.out, {r.id for r in records})
    synthdata.write_dataset(args.out, records, cfg, split)
    print(f"wrote {len(records)} phantoms to {args.out} ({len(split[0])} train / {len(split[1])} test)")
    return EXIT_OK


def cmd_genlabels(args) -> int:
    records = synthdata.read_dataset(_need_dir(args.data, "--data"))
    args.out.mkdir(parents=True, exist_ok=True)
    clipped = 0
    for rec in records:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ShapeOutOfBoundsWarning)
            mask = generate_pseudo_label(rec.ann, args.kind, rec.gt.shape, strict=args.strict)
        clipped += any(issubclass(w.category, ShapeOutOfBoundsWarning) for w in caught)
        io.write_mask(args.out / f"{rec.id}.pgm", mask)
    msg = f"wrote {len(records)} {args.kind.value} labels to {args.out}"
    print(msg + (f" ({clipped} clipped at the image border)" if clipped else ""))
    return EXIT_OK


def _train_config(args) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(
            iters=args.iters, batch=args.batch, alpha=args.alpha, lambda2=args.lambda2,
            lambda1_max=args.lambda1_max, seed=args.seed, shape_con=args.shape_con.value,
            shape_rad=args.shape_rad.value, idmps=not args.no_idmps, crbs=not args.no_crbs,
            cap=not args.no_cap, beta=args.beta, pairing=args.pairing, depth=args.depth,
            base_channels=args.base_channels, crop=args.crop, ckpt_every=args.ckpt_every,
            threads=args.threads, lr0=args.lr)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _train_config(args)
    root = _need_dir(args.data, "--data")
    records = synthdata.read_dataset(root)
    train_recs, _ = synthdata.dataset_split(root, records)
    if not train_recs:
        raise UsageError(f"--data {root}: dataset has no training images")
    res = trainer.train(cfg, train_recs, args.out)
    last = res.log[-1]
    print(f"trained {cfg.iters} iterations on {len(train_recs)} images; final l_total {last['l_total']:.6g}; "
          f"checkpoints in {args.out}")
    return EXIT_OK


def _select(records, root: Path, which: str):
    train_recs, test_recs = synthdata.dataset_split(root, records)
    if which == "all" or (which == "auto" and not test_recs):
        return records
    return test_recs if which in ("test", "auto") else train_recs


def cmd_eval(args) -> int:
    need = {"ensemble": ("con", "rad"), "con": ("con",), "rad": ("rad",)}[args.mode]
    paths = {"con": args.ckpt_con, "rad": args.ckpt_rad}
    for side in need:
        if paths[side] is None:
            raise UsageError(f"--mode {args.mode} needs --ckpt-{side}")
        _need_file(paths[side], f"--ckpt-{side}")
    root = _need_dir(args.data, "--data")
    stores = {}
    for side in need:
        loaded, _, _ = load_checkpoint(paths[side])
        stores[side] = loaded[side] if side in loaded else next(iter(loaded.values()))
    records = _select(synthdata.read_dataset(root), root, args.split)
    if not records:
        raise UsageError(f"--data {root}: no images in the {args.split} split")
    _, mean = trainer.evaluate(stores.get("con"), stores.get("rad"), records, args.mode, args.report, args.threads)
    print(f"{len(records)} images  mode {args.mode}  dsc {mean.dsc:.4f}  jaccard {mean.jaccard:.4f}  "
          f"asd {mean.asd:.3f}  hd95 {mean.hd95:.3f}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    root = _need_dir(args.data, "--data")
    records = synthdata.read_dataset(root)
    noisy = trainer.perturb_dataset(records, args.degrees)
    for rec in noisy:
        try:
            validate_annotation(rec.ann)
        except AnnotationError as exc:
            raise AnnotationError(f"{rec.id}: perturbed annotation invalid ({exc})") from exc
    manifest = synthdata.read_manifest(root)
    cfg = synthdata.SynthConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    split = None
    if manifest.get("split"):
        pos = {r.id: i for i, r in enumerate(noisy)}
        split = ([pos[i] for i in manifest["split"]["train"]], [pos[i] for i in manifest["split"]["test"]])
    _clear_stale(args.out, {r.id for r in noisy})
    synthdata.write_dataset(args.out, noisy, cfg, split)
    print(f"rotated {len(noisy)} annotations by {args.degrees:g} degrees (alternating direction) into {args.out}")
    return EXIT_OK


def cmd_fidelity(args) -> int:
    records = synthdata.read_dataset(_need_dir(args.data, "--data"))
    if not records:
        raise UsageError(f"--data {args.data}: dataset is empty")
    table = shape_fidelity_table(records)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    with open(args.report, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kind", "precision", "recall", "dsc"])
        for kind, row in table.items():
            wr.writerow([kind.value] + [format(row[k], ".10g") for k in ("precision", "recall", "dsc")])
    print(f"{'kind':<14}{'precision':>10}{'recall':>10}{'dsc':>10}")
    for kind, row in table.items():
        print(f"{kind.value:<14}{row['precision']:>10.4f}{row['recall']:>10.4f}{row['dsc']:>10.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_gradients

    if not 0 < args.eps < 1:
        raise UsageError(f"--eps must lie in (0, 1), got {args.eps}")
    res = check_gradients(eps=args.eps, seed=args.seed)
    for term, err in res.max_rel_error.items():
        print(f"{term:<6} max relative error {err:.3e}")
    print(f"max relative error {res.worst:.3e} over {res.num_params} parameters "
          f"({res.shrunk} steps shortened at kinks)")
    return EXIT_OK if res.worst < args.tol and not res.unresolved else EXIT_FAILURE


def _collect_reports(runs: list[Path]) -> list[Path]:
    found = []
    for r in runs:
        if r.is_file():
            found.append(r)
        elif r.is_dir():
            found += sorted(p for p in r.rglob("*.csv") if _is_report(p))
        else:
            raise UsageError(f"--runs {r}: no such file or directory")
    return found


def _is_report(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip() == ",".join(("id",) + REPORT_FIELDS)


def cmd_report(args) -> int:
    paths = _collect_reports(args.runs)
    if not paths:
        raise UsageError("--runs: no metric report CSVs found")
    rows = []
    for p in paths:
        reps = read_report(p)
        per_image = [m for k, m in reps.items() if k not in ("mean", "std")]
        if not per_image:
            continue
        vals = np.array([[getattr(m, f) for f in REPORT_FIELDS] for m in per_image])
        rows.append((str(p), len(per_image), vals.mean(axis=0), vals.std(axis=0)))
    width = max(len(r[0]) for r in rows)
    print(f"{'run':<{width}}  {'n':>4}  " + "  ".join(f"{f:>17}" for f in REPORT_FIELDS))
    for name, n, mu, sd in rows:
        cells = "  ".join(f"{m:>8.4f} ± {s:<6.4f}" for m, s in zip(mu, sd))
        print(f"{name:<{width}}  {n:>4}  {cells}")
    if args.tsv is not None:
        args.tsv.parent.mkdir(parents=True, exist_ok=True)
        with open(args.tsv, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
            wr.writerow(["run", "n"] + [f"{f}_{s}" for f in REPORT_FIELDS for s in ("mean", "std")])
            for name, n, mu, sd in rows:
                wr.writerow([name, n] + [format(v, ".10g") for pair in zip(mu, sd) for v in pair])
    return EXIT_OK


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="asymseg", description="Weakly supervised segmentation from aspect-ratio annotations.")
    p.add_argument("--threads", type=_pos_int, default=None,
                   help=f"cap internal parallelism (default: ${ENV_THREADS} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_pos_int, default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a phantom dataset")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--n", type=_nonneg_int, default=250)
    s.add_argument("--size", type=_pos_int, default=64)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--convex-only", action="store_true")
    s.add_argument("--test-fraction", type=_finite, default=0.2)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("genlabels", parents=[common], help="rasterize one pseudo-label kind for every annotation")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--kind", type=_kind, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--strict", action="store_true", help="fail on shapes that leave the image")
    s.set_defaults(func=cmd_genlabels)

    s = sub.add_parser("train", parents=[common], help="train the network pair")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--iters", type=_pos_int, default=2000)
    s.add_argument("--batch", type=_pos_int, default=8)
    s.add_argument("--crop", type=_pos_int, default=64)
    s.add_argument("--alpha", type=_finite, default=3.0)
    s.add_argument("--lambda2", type=_finite, default=0.3)
    s.add_argument("--lambda1-max", type=_finite, default=1.0)
    s.add_argument("--beta", type=_finite, default=None, help="fixed mixing weight (default: random per image)")
    s.add_argument("--lr", type=_finite, default=0.01)
    s.add_argument("--no-idmps", action="store_true")
    s.add_argument("--no-crbs", action="store_true")
    s.add_argument("--no-cap", action="store_true")
    s.add_argument("--shape-con", type=_kind, default=ShapeKind.QUADRILATERAL)
    s.add_argument("--shape-rad", type=_kind, default=ShapeKind.IRREGULAR_ELLIPSE)
    s.add_argument("--pairing", choices=("cross", "direct"), default="cross")
    s.add_argument("--depth", type=_nonneg_int, default=2)
    s.add_argument("--base-channels", type=_pos_int, default=8)
    s.add_argument("--ckpt-every", type=_nonneg_int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on a dataset")
    s.add_argument("--ckpt-con", type=Path)
    s.add_argument("--ckpt-rad", type=Path)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--mode", choices=trainer.EVAL_MODES, default="ensemble")
    s.add_argument("--report", type=Path, required=True)
    s.add_argument("--split", choices=("auto", "test", "train", "all"), default="auto",
                   help="auto: the test split when the manifest has one, else everything")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("perturb", parents=[common], help="rotate every annotation about its intersection")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--degrees", type=_finite, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("fidelity", parents=[common], help="precision/recall of each pseudo-label kind against ground truth")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--report", type=Path, required=True)
    s.set_defaults(func=cmd_fidelity)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all parameter gradients")
    s.add_argument("--eps", type=_finite, default=1e-4)
    s.add_argument("--tol", type=_finite, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", parents=[common], help="aggregate metric CSVs into mean ± std tables")
    s.add_argument("--runs", type=Path, nargs="+", required=True)
    s.add_argument("--tsv", type=Path, default=None, help="also write a plot-ready TSV")
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.threads = resolve_threads(args.threads)
        if getattr(args, "out", None) is not None and args.out.exists() and not args.out.is_dir():
            raise UsageError(f"--out {args.out} exists and is not a directory")
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
