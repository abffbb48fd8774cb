#!/usr/bin/env python3
"""Time the hot kernels under the compiled and the pure-numpy paths.

The execution path is chosen when :mod:`lanegap.kernels` is imported, so
this script re-runs itself in a subprocess per mode (``LANEGAP_NUMBA=1``
and ``LANEGAP_NUMBA=0``) and prints a side-by-side table.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, *args, repeats=3):
    """Best wall time over `repeats` calls, after one warm-up call."""
    fn(*args)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(repeats):
    from lanegap.kernels import (
        advance_states,
        lstm_scan_bwd,
        lstm_scan_fwd,
        smo_solve,
    )

    rng = np.random.default_rng(0)
    results = {}

    # recurrent scans at the production shape: T=100 frames, batch 32,
    # hidden 128 (gate width 512)
    t, b, h = 100, 32, 128
    ex = rng.normal(size=(t, b, 4 * h)) * 0.1
    wh_t = rng.normal(size=(h, 4 * h)) * 0.1
    mask = np.ones((t, b))
    results["lstm_scan_fwd"] = time_call(
        lstm_scan_fwd, ex, wh_t, mask, 0, 0, repeats=repeats)
    gates, cs, hs = lstm_scan_fwd(ex, wh_t, mask, 0, 0)
    dh_out = rng.normal(size=(t, b, h)) * 0.1
    wh = np.ascontiguousarray(wh_t.T)
    results["lstm_scan_bwd"] = time_call(
        lstm_scan_bwd, gates, cs, hs, wh, mask, dh_out, 0, 0,
        repeats=repeats)

    # car-following rollout: a 50-vehicle platoon over 100 simulated s
    n = 50
    pos = -np.arange(n, dtype=float) * 30.0
    vel = rng.uniform(10.0, 30.0, size=n)
    length = np.full(n, 4.5)
    leader = np.arange(-1, n - 1, dtype=np.int64)
    is_idm = np.ones(n, dtype=np.int64)
    params = np.tile(np.array([30.0, 2.0, 1.5, 1.4, 2.0, 4.0]), (n, 1))
    order = np.argsort(-pos, kind="stable").astype(np.int64)
    results["advance_states"] = time_call(
        advance_states, pos, vel, length, leader, is_idm, params, order,
        1000, 0.1, repeats=repeats)

    # dual optimization over a 600-point RBF Gram matrix
    m = 600
    x = rng.normal(size=(m, 8))
    x[m // 2:, 0] += 1.5
    y = np.concatenate([-np.ones(m // 2), np.ones(m // 2)])
    sq = (x * x).sum(axis=1)
    gram = np.exp(-0.1 * (sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)))
    results["smo_solve"] = time_call(
        smo_solve, gram, y, 10.0, 1e-3, 200, repeats=repeats)

    return results


def run_mode(flag, repeats):
    env = dict(os.environ, LANEGAP_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--mode-child",
         "--repeats", str(repeats)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--mode-child", action="store_true",
                    help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.mode_child:
        print(json.dumps(workloads(args.repeats)))
        return

    numba = run_mode("1", args.repeats)
    plain = run_mode("0", args.repeats)
    print(f"{'kernel':<18} {'numpy (ms)':>12} {'numba (ms)':>12} "
          f"{'speedup':>9}")
    print("-" * 55)
    for name in numba:
        ratio = plain[name] / numba[name] if numba[name] > 0 else float("inf")
        print(f"{name:<18} {plain[name] * 1e3:>12.2f} "
              f"{numba[name] * 1e3:>12.2f} {ratio:>8.1f}x")


if __name__ == "__main__":
    main()
