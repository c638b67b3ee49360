"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Sizes follow the default scenario (841 candidates, K = 9, c = 18) plus a
larger case for each kernel.  ``--end-to-end`` also times ``fimsketch
tables`` under each backend in a fresh interpreter.
"""
import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit

import numpy as np

from fimsketch import _kernels


def cases(rng):
    for n, k in ((18, 9), (841, 9), (20000, 9)):
        rows = rng.standard_normal((n, k))
        w = rng.uniform(0.1, 1.0, n)
        yield "weighted_gram", f"{n}x{k}", (rows, w)
        yield "count_gram", f"{n}x{k}", (rows, rng.integers(0, 3, n).astype(np.int64), w)
    for c in (18, 200):
        yield "eks_drift", f"c={c}", (rng.standard_normal((c, 9)),)
        yield "laplace_moments", f"c={c}", (rng.uniform(-1, 1, (c, 4)), rng.normal(0, 5, c))
    for m in (1000, 100000):
        yield "snap_axis", f"{m}", (rng.uniform(-1, 1, m), 2 / 30, 29)
        p = rng.uniform(0, 1, 841)
        yield "draw_from_cdf", f"{m} draws", (np.cumsum(p) / p.sum(), rng.random(m))


def end_to_end():
    for flag in ("0", "1"):
        env = dict(os.environ, FIMSKETCH_NUMBA=flag)
        with tempfile.TemporaryDirectory() as out:
            t0 = time.perf_counter()
            subprocess.run([sys.executable, "-m", "fimsketch", "tables", "--out", out], env=env, check=True,
                           stdout=subprocess.DEVNULL)
            print(f"fimsketch tables, FIMSKETCH_NUMBA={flag}: {time.perf_counter() - t0:.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()
    if _kernels.numba_kernels is None:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':16s} {'size':>12s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, size, inputs in cases(rng):
        timings = []
        for table in (_kernels.numpy_kernels, _kernels.numba_kernels):
            fn = table[name]
            fn(*inputs)  # compile / warm up
            number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(*inputs), number=1), 1e-7)))
            best = min(timeit.repeat(lambda: fn(*inputs), number=number, repeat=args.repeat)) / number
            timings.append(best * 1e6)
        print(f"{name:16s} {size:>12s} {timings[0]:10.1f} {timings[1]:10.1f} {timings[0] / timings[1]:8.2f}")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
