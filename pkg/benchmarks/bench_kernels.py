"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--size 32] [--radius 16] [--repeat 3]

Each kernel runs on identical inputs under both backends; the report gives the
best-of-N wall time, the speed-up and the largest output difference.
"""

import argparse
import sys
import time

import numpy as np

from se3flow import _backend
from se3flow import correlation as corr
from se3flow import dense_se3 as dse3
from se3flow.field import SE3Field
from se3flow.geometry import PinholeCamera
from se3flow.smoothing import EdgeWeightField, apply_smoothing_operator


def problems(size, radius, rng):
    cam = PinholeCamera(0.85 * size, 0.85 * size, size / 2, size / 2)
    field = SE3Field.from_twists(0.01 * rng.standard_normal((size, size, 6)))
    inv = rng.uniform(0.2, 0.5, (size, size))
    targets = np.concatenate([rng.uniform(0, size, (size, size, 2)), inv[..., None]], axis=-1)
    conf = rng.uniform(0, 1, (size, size, 3))
    emb = rng.standard_normal((size, size, 16))
    u = rng.standard_normal((size, size, 16))
    w = EdgeWeightField(rng.uniform(0, 5, (size, size)), rng.uniform(0, 5, (size, size)))
    f1 = rng.standard_normal((size, size, 64))
    f2 = rng.standard_normal((size, size, 64))
    coords = rng.uniform(0, size, (size, size, 2))
    return {
        "normal_equations": lambda: dse3.normal_equations(field, emb, conf, targets, cam, inv, radius),
        "smoothing_apply": lambda: apply_smoothing_operator(u, w),
        "lookup_on_demand": lambda: corr.build_pyramid(f1, f2, corr.ON_DEMAND).lookup(coords, 4),
    }


def best_time(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32, help="square raster side")
    ap.add_argument("--radius", type=int, default=16, help="Dense-SE3 neighbourhood radius")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "compiled" not in _backend.available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"raster {args.size}x{args.size}, radius {args.radius}, best of {args.repeat}")
    print(f"{'kernel':<18} {'compiled [s]':>13} {'numpy [s]':>11} {'speed-up':>9} {'max diff':>10}")
    for name, fn in problems(args.size, args.radius, rng).items():
        res = {}
        for b in ("compiled", "python"):
            with _backend.use(b):
                res[b] = best_time(fn, args.repeat)
        tc, oc = res["compiled"]
        tp, op = res["python"]
        print(f"{name:<18} {tc:>13.4f} {tp:>11.4f} {tp / tc:>8.1f}x {max_diff(oc, op):>10.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
