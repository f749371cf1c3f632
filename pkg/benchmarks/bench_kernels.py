"""Compiled vs numpy-fallback kernel throughput.

Run with ``python benchmarks/bench_kernels.py [--events N] [--runs R]``. Each
kernel is timed on identical inputs with both backends (when the extension is
built) and the outputs are checked for equality first.
"""

import argparse
import statistics
import time

import numpy as np

from evpose import kernels


def _median(fn, runs):
    out = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def _cases(n, seed):
    rng = np.random.default_rng(seed)
    w, h = 1280, 720
    x = rng.integers(0, w, n)
    y = rng.integers(0, h, n)
    p = rng.choice([-1, 1], n)
    t = np.sort(rng.integers(0, 50_000, n))
    segs = np.column_stack([rng.uniform(-0.5, 0.5, (200, 2)), rng.uniform(4, 6, 200),
                            rng.uniform(-0.5, 0.5, (200, 2)), rng.uniform(4, 6, 200)]).reshape(-1, 2, 3)
    a = np.unique(rng.integers(0, w * h, n))
    b = np.unique(rng.integers(0, w * h, n))
    return {
        "last_polarity": (lambda be: kernels.last_polarity(x, y, p, w, h, backend=be), n),
        "polarity_counts": (lambda be: kernels.polarity_counts(x, y, p, w, h, backend=be), n),
        "time_surface": (lambda be: kernels.time_surface(x, y, p, t, 0, 50_000, w, h, backend=be), n),
        "occupancy": (lambda be: kernels.occupancy(segs, 1066.0, 1066.0, 639.5, 359.5, w, h, backend=be), 200),
        "sorted_difference": (lambda be: kernels.sorted_difference(a, b, backend=be), len(a)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=1_000_000)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND}); median of {args.runs} runs")
    print(f"{'kernel':18s}" + "".join(f"{b:>16s}" for b in backends) + ("    speedup" if len(backends) > 1 else ""))
    for name, (fn, items) in _cases(args.events, args.seed).items():
        ref = fn(backends[0])
        for b in backends[1:]:
            assert np.array_equal(ref, fn(b)), f"{name}: backends disagree"
        times = [_median(lambda: fn(b), args.runs) for b in backends]
        cells = "".join(f"{items / s:13,.0f}/s " for s in times)
        extra = f"   {times[0] / times[1]:7.1f}x" if len(times) > 1 else ""
        print(f"{name:18s}{cells}{extra}")


if __name__ == "__main__":
    main()
