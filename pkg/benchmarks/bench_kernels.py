"""Time the compiled kernels against the numpy fallback and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--traj N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ltsf._backend import available_backends
from ltsf.numkit import stream_states


def _cases(n_traj: int):
    states = lambda: stream_states(0, np.arange(n_traj))  # noqa: E731  fresh copy per call
    rng = np.random.default_rng(0)
    hist = 1.19 + 0.02 * rng.random((n_traj, 250))
    lor = np.array([0.0, -0.01, 9.0]) + 1e-3 * rng.standard_normal((n_traj, 3))
    lv = np.column_stack([rng.uniform(50, 150, n_traj), rng.uniform(10, 30, n_traj)])
    return {
        "uniform_fill(1000)": lambda k: k.uniform_fill(states(), 1000, 0.0, 1.0),
        "normal_fill(1000)": lambda k: k.normal_fill(states(), 1000),
        "mackey_glass(2000)": lambda k: k.mackey_glass(hist, 2000, 0.1, 0.2, 0.1),
        "lorenz(2000)": lambda k: k.lorenz(lor, 2000, 0.01, 10.0, 28.0, 8.0 / 3.0),
        "lotka_volterra(2000)": lambda k: k.lotka_volterra(lv, states(), 2000, 0.01, 1.0, 0.1, 0.02, 0.5, 0.002),
    }


def _best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--traj", type=int, default=200)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    names = list(backends)
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}{'identical':>11}")
    for label, case in _cases(args.traj).items():
        times, outs = {}, {}
        for n in names:
            times[n], outs[n] = _best_time(lambda: case(backends[n]), args.repeat)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        same = "-"
        if "cython" in outs:
            a, b = outs["python"], outs["cython"]
            a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
            same = "yes" if all(np.array_equal(x, y) for x, y in zip(a, b)) else "NO"
        print(f"{label:<24}" + "".join(f"{times[n] * 1e3:>10.1f}ms" for n in names) + f"{speed:>9.1f}x{same:>11}")


if __name__ == "__main__":
    main()
