"""Compare the compiled kernels against the pure-Python fallback.

Run from the repository root after building the extension:

    python benchmarks/bench_kernels.py [--repeat 3] [--symbols 20000]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from ponlut import _pykernels

try:
    from ponlut import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def workloads(n_sym: int):
    rng = np.random.default_rng(0)
    s = rng.choice([-1.0, 1.0], n_sym)
    x2 = np.repeat(s, 2) + 0.05 * rng.standard_normal(2 * n_sym)
    levels = np.array([-1.0, 1.0])
    return {
        "prbs15_bits": lambda k: k.prbs15_bits(0x1234, 32 * n_sym),
        "feedback_precode": lambda k: k.feedback_precode(s, np.array([0.3, -0.1]), 1.2),
        "gardner_loop": lambda k: k.gardner_loop(x2, 2, n_sym - 8, 0.25, 8e-3, 6e-5, 1.0),
        "lms_ffe_dfe (15+3 taps)": lambda k: k.lms_ffe_dfe(
            s, np.eye(1, 15, 7).ravel(), 7, np.zeros(3), s, n_sym, levels, 2e-3, 2e-3, True),
    }


def best_time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--symbols", type=int, default=20_000)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':26s}" + "".join(f"{name:>12s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, job in workloads(args.symbols).items():
        times = [best_time(lambda mod=mod: job(mod), args.repeat) for _, mod in backends]
        row = f"{label:26s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.0f}x"
        print(row)
    if _ckernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
