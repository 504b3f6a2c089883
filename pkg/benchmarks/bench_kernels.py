"""Benchmark the jitted kernels against the pure-numpy fallback.

Run twice to compare paths:

    python benchmarks/bench_kernels.py
    SEPSISCDS_NO_NUMBA=1 python benchmarks/bench_kernels.py

or pass --both to fork a subprocess per backend and print one table.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def bench_assign(n, k, d, repeats):
    from sepsiscds import kernels
    rng = np.random.default_rng(0)
    X = rng.normal(size=(n, d))
    C = rng.normal(size=(k, d))
    kernels.assign_nearest(X[:128], C)  # warm up / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        labels, dist = kernels.assign_nearest(X, C)
        best = min(best, time.perf_counter() - t0)
    return best, int(labels.sum())


def bench_hist(n, d, bins, repeats):
    from sepsiscds import kernels
    rng = np.random.default_rng(1)
    codes = rng.integers(0, bins, size=(n, d)).astype(np.uint8)
    g = rng.normal(size=n)
    h = rng.random(n)
    rows = np.arange(n, dtype=np.int64)
    kernels.hist_gradients(codes[:128], g[:128], h[:128],
                           rows[:128], bins)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        gs, hs = kernels.hist_gradients(codes, g, h, rows, bins)
        best = min(best, time.perf_counter() - t0)
    return best, float(gs.sum())


def run(args):
    from sepsiscds import kernels
    results = {
        "backend": kernels.backend(),
        "assign_nearest": {},
        "hist_gradients": {},
    }
    for n, k, d in ((20_000, 100, 10), (100_000, 750, 6), (300_000, 750, 20)):
        secs, checksum = bench_assign(n, k, d, args.repeats)
        results["assign_nearest"][f"n={n} k={k} d={d}"] = secs
    for n, d, bins in ((50_000, 10, 64), (300_000, 20, 64)):
        secs, checksum = bench_hist(n, d, bins, args.repeats)
        results["hist_gradients"][f"n={n} d={d} bins={bins}"] = secs
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--both", action="store_true",
                        help="run numba and numpy backends in subprocesses")
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    if args.both:
        tables = []
        for flag in ("0", "1"):
            env = dict(os.environ, SEPSISCDS_NO_NUMBA=flag)
            out = subprocess.run(
                [sys.executable, __file__, "--repeats", str(args.repeats), "--json"],
                env=env, capture_output=True, text=True, check=True)
            tables.append(json.loads(out.stdout.splitlines()[-1]))
        merged = {}
        for table in tables:
            for kernel in ("assign_nearest", "hist_gradients"):
                for case, secs in table[kernel].items():
                    merged.setdefault((kernel, case), {})[table["backend"]] = secs
        print(f"{'kernel':<16}{'case':<28}{'numba':>10}{'numpy':>10}{'speedup':>9}")
        for (kernel, case), row in merged.items():
            nb = row.get("numba")
            np_ = row.get("numpy")
            ratio = f"{np_ / nb:8.2f}x" if nb and np_ else "     n/a"
            nb_s = f"{nb * 1e3:8.1f}ms" if nb else "     n/a"
            np_s = f"{np_ * 1e3:8.1f}ms" if np_ else "     n/a"
            print(f"{kernel:<16}{case:<28}{nb_s}{np_s}{ratio}")
        return

    results = run(args)
    if args.json:
        print(json.dumps(results))
    else:
        print(f"backend: {results['backend']}")
        for kernel in ("assign_nearest", "hist_gradients"):
            for case, secs in results[kernel].items():
                print(f"  {kernel:<16}{case:<28}{secs * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
