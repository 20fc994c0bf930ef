"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two hot paths — the transition log-likelihood and the
conditional-time root solver — on synthetic cohorts of increasing size and
prints a comparison table.

Run with:  python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from mtsurv._kernels import get_backends
from mtsurv.model import QuadratureConfig


def _dataset(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    entry = rng.uniform(0, 3, n) * (rng.random(n) < 0.8)
    start = entry.copy()
    stop = start + rng.uniform(0.01, 5, n)
    status = (rng.random(n) < 0.6).astype(int)
    lp = rng.normal(scale=0.4, size=n)
    u = rng.uniform(1e-6, 1 - 1e-6, n)
    return start, stop, status, entry, lp, u


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    backends = get_backends()
    quad = QuadratureConfig(30)
    gam, lam, d1, d2 = 1.3, 0.12, 0.1, 0.15
    qx, qw = quad.jacobi_points(gam)
    print(f"available backends: {sorted(backends)}")
    header = f"{'kernel':<18}{'n':>9}" + "".join(f"{name + ' (ms)':>16}" for name in sorted(backends))
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for n in (1_000, 10_000, 100_000):
        start, stop, status, entry, lp, u = _dataset(n)
        rows = {
            "loglik": lambda b: b.transition_loglik(
                start, stop, status, entry, lp, lam, gam, d1, d2, True, True, False, qx, qw
            ),
            "root_solver": lambda b: b.solve_conditional_times(
                lam, gam, lp, d1, d2, True, True, False, entry, u, 1e-10, qx, qw
            ),
        }
        for kernel, call in rows.items():
            times = {}
            for name in sorted(backends):
                repeats = 5 if n <= 10_000 else 3
                times[name] = _time(lambda: call(backends[name]), repeats)
            line = f"{kernel:<18}{n:>9}" + "".join(f"{times[k] * 1e3:>16.2f}" for k in sorted(times))
            if len(times) == 2:
                line += f"{times['python'] / times['compiled']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
