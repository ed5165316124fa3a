#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure numpy fallback.

Runs each hot kernel on representative workloads and, with --end-to-end,
times a full simulation under each backend in a subprocess (backend
selection happens at import, so it needs a fresh interpreter).

Usage:
    python benchmarks/bench_kernels.py [--slots N] [--repeat K] [--end-to-end]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dpsqkd.kernels import _pykernels

try:
    from dpsqkd.kernels import _ckernels
except ImportError:
    _ckernels = None


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(slots, repeat):
    rng = np.random.default_rng(1)
    n = 128
    periods = slots // n
    code = rng.integers(0, 3, size=periods * n).astype(np.uint8)
    g_tab = np.array([0.9998, 0.99999, 0.999995])
    f_slot = np.ones(n)
    u = rng.random(periods * n)

    t_cand = rng.uniform(0, 1e9, 20000)
    t_cand.sort()

    rows = []
    cases = [
        ("candidate_clicks", f"{slots:,} slots",
         lambda mod: time_call(mod.candidate_clicks, code, g_tab, f_slot, u,
                               repeat=repeat)),
        ("dead_time_filter", "20,000 candidates",
         lambda mod: time_call(mod.dead_time_filter, t_cand, 1e4, -np.inf,
                               repeat=repeat)),
        ("lfsr_bits (order 31)", "2,000,000 bits",
         lambda mod: time_call(lambda *a: mod.lfsr_bits(31, 28, 12345,
                                                        2_000_000),
                               repeat=repeat)),
    ]
    for name, size, runner in cases:
        py = runner(_pykernels)
        cy = runner(_ckernels) if _ckernels is not None else None
        rows.append((name, size, py, cy))
    return rows


def print_table(rows):
    print(f"{'kernel':24s} {'workload':20s} {'python':>10s} "
          f"{'cython':>10s} {'speedup':>8s}")
    for name, size, py, cy in rows:
        cy_s = f"{cy * 1e3:8.2f}ms" if cy is not None else "       --"
        ratio = f"{py / cy:7.1f}x" if cy else "      --"
        print(f"{name:24s} {size:20s} {py * 1e3:8.2f}ms {cy_s} {ratio}")


def bench_end_to_end(packets):
    code = (
        "import time; t0=time.perf_counter();"
        "from dpsqkd.config import load_scenario;"
        "from dpsqkd.simcore import run_scenario;"
        "from dpsqkd import kernels;"
        f"rep=run_scenario(load_scenario('pattern-prbs'), packets={packets});"
        "print(f'{kernels.BACKEND}: {time.perf_counter()-t0:.2f}s, '"
        "f'{rep.records.shape[0]} records')"
    )
    for backend in ("python", "cython"):
        if backend == "cython" and _ckernels is None:
            print("cython: extension not built, skipped")
            continue
        sys.stdout.flush()
        env = dict(os.environ, DPSQKD_KERNELS=backend)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--slots", type=int, default=8_000_000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--end-to-end", action="store_true",
                        help="also time a full 200k-period simulation under "
                             "each backend (subprocesses)")
    args = parser.parse_args()

    if _ckernels is None:
        print("note: compiled kernels not available, timing fallback only\n")
    print_table(bench_kernels(args.slots, args.repeat))
    if args.end_to_end:
        print("\nfull simulation, pattern-prbs preset, 200,000 periods:")
        bench_end_to_end(200_000)


if __name__ == "__main__":
    main()
