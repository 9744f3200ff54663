"""Time the compiled and pure-Python receiver kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--symbols N] [--repeat R]

Both backends run the CMA butterfly and blind phase search on the same data;
the script checks the outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from qdcomb import kernels
from qdcomb.rxdsp import BpsConfig
from qdcomb.txdsp import constellation


def _best_of(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_cma(mod, xin, n_sym, taps_len):
    def run():
        taps = np.zeros((2, 2, taps_len), dtype=complex)
        taps[0, 0, taps_len // 2] = taps[1, 1, taps_len // 2] = 1.0
        out = np.empty((2, n_sym), dtype=complex)
        err = np.empty(n_sym)
        mod.cma_run(xin, taps, 1e-3, 1.0, n_sym, 2, out, err, True)
        return out
    return run


def bench_bps(mod, sym, tests, levels):
    def run():
        return np.asarray(mod.bps_unwrapped(sym, tests, levels, 14, 15, 1e-9, np.pi / 2))
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python backend is available")

    rng = np.random.default_rng(0)
    n, taps_len = args.symbols, 30
    xin = np.ascontiguousarray(rng.standard_normal((2, 2 * n + taps_len))
                               + 1j * rng.standard_normal((2, 2 * n + taps_len)))
    qam = constellation("16QAM")
    pts = qam.points[rng.integers(0, len(qam.points), n)]
    sym = np.ascontiguousarray(pts * np.exp(1j * np.cumsum(rng.normal(0, 0.01, n)))
                               + 0.05 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)))
    tests = BpsConfig().test_phases()
    levels = np.ascontiguousarray(qam.levels, dtype=float)

    cases = {
        "cma_run (30 taps, 2x2)": lambda m: bench_cma(m, xin, n, taps_len),
        "bps_unwrapped (45 phases, N=30)": lambda m: bench_bps(m, sym, tests, levels),
    }
    print(f"{'kernel':34s} {'backend':8s} {'time [s]':>10s} {'Msym/s':>8s} {'speed-up':>9s}")
    for name, make in cases.items():
        timings = {}
        outputs = {}
        for label in ("python", "cython"):
            if label not in backends:
                continue
            timings[label], outputs[label] = _best_of(make(backends[label]), args.repeat)
        if len(outputs) == 2 and not np.allclose(outputs["python"], outputs["cython"],
                                                 rtol=1e-9, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        for label, t in timings.items():
            ratio = timings["python"] / t
            print(f"{name:34s} {label:8s} {t:10.4f} {n / t / 1e6:8.3f} {ratio:8.1f}x")


if __name__ == "__main__":
    main()
