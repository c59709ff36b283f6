"""Time the compiled and pure-Python stationary-point kernels on the same rows.

    python benchmarks/bench_kernels.py --rows 2000 --gamma-G 1 4.47
"""

import argparse
import time

import numpy as np

from maxfl_sim.core import RngStream
from maxfl_sim.meanest import _pykernels

try:
    from maxfl_sim.meanest import _ckernels
except ImportError:
    _ckernels = None


def rows_for(gamma_G: float, n: int, seed: int) -> np.ndarray:
    rng = RngStream(seed, purpose="bench").generator()
    return np.array([0.0, 2.0 * gamma_G]) + rng.standard_normal((n, 2))


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=500)
    parser.add_argument("--gamma-G", type=float, nargs="+", default=[1.0, 4.47])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if _ckernels is None:
        print("compiled kernels not built; timing the Python fallback only")
    print(f"{'gamma_G':>8} {'rows':>6} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |dw|':>9}")
    for gG in args.gamma_G:
        rows = rows_for(gG, args.rows, args.seed)
        py = best_of(lambda: _pykernels.select_minima(rows, _pykernels.SIGMOID), args.repeat)
        if _ckernels is None:
            print(f"{gG:8.3f} {args.rows:6d} {py:10.3f}")
            continue
        cy = best_of(lambda: _ckernels.select_minima(rows, _pykernels.SIGMOID), args.repeat)
        diff = np.max(np.abs(_ckernels.select_minima(rows, _pykernels.SIGMOID)
                             - _pykernels.select_minima(rows, _pykernels.SIGMOID)))
        print(f"{gG:8.3f} {args.rows:6d} {py:10.3f} {cy:10.4f} {py / cy:8.0f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
