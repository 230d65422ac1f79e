"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--train-iters 20]

Prints the median wall time per call for each kernel on both backends, the
speedup, and the time per training iteration at the default desk-scale setup.
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from asymseg import kernels
from asymseg.geometry import boundary_pixels


def median_time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases():
    rng = np.random.default_rng(0)
    # a typical layer of the default network: batch 8, 16 -> 16 channels at 32x32
    xp = rng.standard_normal((8, 16, 34, 34)).astype(np.float32)
    w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    b = rng.standard_normal(16).astype(np.float32)
    dy = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    mask = rng.random((128, 128)) < 0.01
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    xs, ys = 64 + 40 * np.cos(t), 64 + 25 * np.sin(t)
    yy, xx = np.mgrid[0:64, 0:64] + 0.5
    blob = ((xx - 32) / 20) ** 2 + ((yy - 32) / 11) ** 2 < 1
    r, c = np.nonzero(boundary_pixels(blob))
    pts = np.stack([c + 0.5, r + 0.5], axis=1)
    blob8 = blob.astype(np.uint8)
    return {
        "conv3x3_forward": lambda m: m.conv3x3_forward(xp, w, b),
        "conv3x3_grad_input": lambda m: m.conv3x3_grad_input(dy, w),
        "conv3x3_grad_weight": lambda m: m.conv3x3_grad_weight(xp, dy),
        "edt_squared 128x128": lambda m: m.edt_squared(mask),
        "fill_polygon 128x128": lambda m: m.fill_polygon(xs, ys, 128, 128),
        "longest_inside_chord": lambda m: m.longest_inside_chord(blob8, pts),
    }


def train_iter_ms(backend, iters):
    """Per-iteration training time, measured in a fresh process with the backend forced."""
    code = (
        "import time;from asymseg import trainer, synthdata;"
        "d=synthdata.make_dataset(synthdata.SynthConfig(n=32,seed=0));"
        f"c=trainer.TrainConfig(iters={iters});trainer.train(trainer.TrainConfig(iters=2),d);"
        "t=time.perf_counter();trainer.train(c,d);"
        f"print((time.perf_counter()-t)/{iters}*1e3)"
    )
    env = dict(os.environ, ASYMSEG_KERNELS="python" if backend == "python" else "")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train-iters", type=int, default=20, help="0 skips the training comparison")
    args = ap.parse_args()

    mods = kernels.available_backends()
    if len(mods) < 2:
        print("compiled extension not built; only the numpy backend is available")
    names = [m.BACKEND for m in mods]
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(mods) == 2 else ""))
    for label, fn in cases().items():
        ts = [median_time(lambda m=m: fn(m), args.repeat) for m in mods]
        row = f"{label:<24}" + "".join(f"{t * 1e3:>10.2f}ms" for t in ts)
        if len(ts) == 2:
            row += f"{ts[1] / ts[0]:>11.1f}x"
        print(row)

    if args.train_iters > 0:
        per = {n: train_iter_ms(n, args.train_iters) for n in names}
        row = f"{'train iter (b8, 64^2)':<24}" + "".join(f"{per[n]:>10.1f}ms" for n in names)
        if len(names) == 2:
            row += f"{per[names[1]] / per[names[0]]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
