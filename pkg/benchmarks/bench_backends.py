"""Compare the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_backends.py [--events 10000000] [--iterations 5]

Times every hot kernel on both backends, checks their outputs are identical
and prints a table with the speed-up of numba over numpy.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from evla import _accel, kernels
from evla.bench import machine_id, run_bench, synthetic_columns
from evla.events import SensorGeometry


def _median_time(fn, iterations):
    fn()  # warm-up / compile
    times = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(n: int, g: SensorGeometry, seed: int):
    x, y, t, p = synthetic_columns(n, g, seed)
    tnorm = np.linspace(0.0, 4.0, n)
    rng = np.random.default_rng(seed)
    logs = np.log(rng.random((4, 20_000)) + 1e-3)
    ftimes = np.array([0, 33_333, 66_667, 100_000], dtype=np.int64)
    return {
        "first_unsorted": lambda b: kernels.impl("first_unsorted", b)(t),
        "first_out_of_bounds": lambda b: kernels.impl("first_out_of_bounds", b)(x, y, g.width, g.height),
        "count_accumulate": lambda b: kernels.impl("count_accumulate", b)(x, y, g.width, g.height),
        "sum_accumulate": lambda b: kernels.impl("sum_accumulate", b)(x, y, p, g.width, g.height),
        "latest_index": lambda b: kernels.impl("latest_index", b)(x, y, g.width, g.height),
        "voxel_scatter": lambda b: kernels.impl("voxel_scatter", b)(x, y, p, tnorm, 5, g.width, g.height),
        "threshold_events": lambda b: kernels.impl("threshold_events", b)(logs, ftimes, 0.2),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=10_000_000)
    ap.add_argument("--kernel-events", type=int, default=2_000_000)
    ap.add_argument("--iterations", type=int, default=5)
    ap.add_argument("--window-size", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1

    g = SensorGeometry()
    print("machine:", machine_id())
    print(f"\nkernels on {args.kernel_events:,} events (median of {args.iterations})")
    print(f"{'kernel':22s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s}  identical")
    for name, run in kernel_cases(args.kernel_events, g, args.seed).items():
        tn = _median_time(lambda: run("numba"), args.iterations)
        tp = _median_time(lambda: run("numpy"), args.iterations)
        same = _same(run("numba"), run("numpy"))
        print(f"{name:22s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x  {same}")

    print(f"\npipeline on {args.events:,} synthetic events, window {args.window_size}")
    cols = synthetic_columns(args.events, g, args.seed)
    for backend in _accel.BACKENDS:
        r = run_bench(cols, g, args.window_size, args.iterations, backend).to_json()
        eps = ", ".join(f"{k} {v / 1e6:8.1f} M ev/s" for k, v in r["events_per_s"].items())
        print(f"{backend:6s} {eps}  digest {r['digest'][:12]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
