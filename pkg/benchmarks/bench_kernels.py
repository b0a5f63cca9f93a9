"""Compiled vs pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Reports the median wall time per call for each backend and the speedup.
"""

import argparse
import time

import numpy as np

from wavehead import _pykernels, linalg, metrics, training
from wavehead.heads import HeadDims, HeadVariant, build_head

try:
    from wavehead import _ckernels
except ImportError:
    _ckernels = None


def use(mod):
    linalg.kernels = mod
    metrics.kernels = mod


def timeit(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases():
    g = np.random.default_rng(0)
    A = g.normal(scale=0.1, size=(64, 64))
    S = A - A.T
    M = np.eye(64) + S
    B = g.normal(size=(64, 64))
    conf = g.uniform(size=4000)
    correct = (g.uniform(size=4000) < conf).astype(np.float64)
    params = build_head(HeadVariant.FULL_WAVE, HeadDims(n=64), 0)
    F = g.normal(size=(128, 64))
    y = g.integers(0, 10, size=128)
    state = training.AdamState.zeros_like(params)

    def step():
        _, grads = training.backward(params, F, y, 0.01)
        training.adam_step(params, grads, state, 1e-3)

    return {
        "lu_factor d=64": lambda: linalg.lu_factor(M),
        "lu_solve d=64, 64 rhs": lambda: linalg.lu_solve(M, B),
        "skew d=64": lambda: linalg.skew_symmetrize(A),
        "cayley d=64": lambda: linalg.cayley(S),
        "ece bins n=4000": lambda: metrics.reliability_bins(np.stack([conf, 1 - conf], 1), np.zeros(4000, int)),
        "FullWave train step b=128": step,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("compiled", _ckernels)] if _ckernels else [])
    results = {}
    for name, mod in backends:
        use(mod)
        for label, fn in cases().items():
            results.setdefault(label, {})[name] = timeit(fn, args.repeat)
    print(f"{'kernel':28s} {'python':>12s} {'compiled':>12s} {'speedup':>8s}")
    for label, r in results.items():
        c = r.get("compiled")
        sp = f"{r['python'] / c:7.1f}x" if c else "     n/a"
        cs = f"{c * 1e6:10.1f}us" if c else "         n/a"
        print(f"{label:28s} {r['python'] * 1e6:10.1f}us {cs} {sp}")


if __name__ == "__main__":
    main()
