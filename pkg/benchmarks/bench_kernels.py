"""Compare the compiled and pure-numpy kernels on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from autonom import kernels
from autonom._accel import NUMBA_AVAILABLE


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    n = 200_000
    a, s = rng.exponential(1 / 0.8, n), rng.exponential(1.0, n)
    yield f"lindley n={n}", kernels.lindley_waits_numpy, kernels.lindley_waits_numba, (a, s)

    X = rng.normal(size=(2000, 13))
    y = np.where(X[:, 0] + 0.3 * rng.normal(size=2000) > 0, 1.0, -1.0)
    order = np.stack([rng.permutation(2000) for _ in range(20)])
    yield "pegasos 2000x13, 20 epochs", kernels.pegasos_epochs_numpy, kernels.pegasos_epochs_numba, (X, y, 1e-3, order)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy s':>10}{'numba s':>10}{'speedup':>9}  max |diff|")
    for name, slow, fast, inputs in cases(rng):
        fast(*inputs)  # compile outside the timed region
        ref, got = slow(*inputs), fast(*inputs)
        ref = ref if isinstance(ref, tuple) else (ref,)
        got = got if isinstance(got, tuple) else (got,)
        # The numpy Lindley path sums a running walk, so rounding differs slightly from the loop
        diff = max(float(np.abs(np.asarray(r) - np.asarray(g)).max()) for r, g in zip(ref, got))
        t_slow = best_of(lambda: slow(*inputs), args.repeat)
        t_fast = best_of(lambda: fast(*inputs), args.repeat)
        print(f"{name:<30}{t_slow:>10.4f}{t_fast:>10.4f}{t_slow / t_fast:>8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
