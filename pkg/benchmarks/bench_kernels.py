"""Compiled kernels against the pure-Python fallback.

Runs the same workloads through both backends from the same stream, checks
that the outputs are identical, and prints timings and the speedup.

    python3 benchmarks/bench_kernels.py [--scale 1.0]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vqueue._backend import compiled_kernels, python_kernels
from vqueue.intensity import IntensityExpr, IntensityField, lyapunov_text, truncate_text
from vqueue.rng import SeedSpec

MM1 = IntensityField.from_strings("1", "2", "1", 1, 2)
HEAVY = IntensityField.from_strings("0.5", "6/(1+x)", "0.5", 0.5, 6)


def workloads(scale: float):
    n = lambda base: max(1, int(base * scale))  # noqa: E731
    phi = IntensityExpr.parse(truncate_text(lyapunov_text(2, 1)), allow_time=True).program
    n_prog = IntensityExpr.parse("n").program
    return {
        "next_events (heavy tail)": lambda k, bg: k.next_events(
            HEAVY.kernel_model, 1, 0.0, 0.0, n(20000), bg),
        "cycles (M/M/1)": lambda k, bg: k.cycles(
            MM1.kernel_model, 0, n(2000), 64, [n_prog], 1e6, bg),
        "hitting_times (heavy tail)": lambda k, bg: k.hitting_times(
            HEAVY.kernel_model, 5, 0.0, 0.0, 1e6, n(1000), bg),
        "dynkin (M/M/1, t=5)": lambda k, bg: k.dynkin(
            MM1.kernel_model, phi, 1, 0.0, 0.0, 5.0, n(300), bg),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=2024)
    args = p.parse_args(argv)
    if compiled_kernels is None:
        raise SystemExit("compiled extension is not built; run `pip install -e .` first")

    seed = SeedSpec(args.seed)
    print(f"{'workload':30s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s}  identical")
    for name, job in workloads(args.scale).items():
        timings, outputs = [], []
        for k in (compiled_kernels, python_kernels):
            bg = seed.spawn(name).bit_generator()
            t0 = time.perf_counter()
            outputs.append(job(k, bg))
            timings.append(time.perf_counter() - t0)
        print(f"{name:30s} {timings[0]:11.4f} {timings[1]:10.3f} {timings[1] / timings[0]:8.0f}x"
              f"  {_same(*outputs)}")


if __name__ == "__main__":
    main()
