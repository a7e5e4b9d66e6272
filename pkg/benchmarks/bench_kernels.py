"""Payload kernel benchmark: numba-compiled vs pure numpy block fill.

Run with ``python3 benchmarks/bench_kernels.py [--mib N] [--repeat R]``.
The numba column is skipped when numba is unavailable or disabled with
``FEDBENCH_NUMBA=0``.
"""

import argparse
import time

import numpy as np

from fedbench import _kernels


def best_of(fn, out, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(12345, 0, out)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mib", type=int, nargs="+", default=[1, 16, 128])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    kernels = {"numpy": _kernels.fill_blocks_numpy}
    if _kernels.fill_blocks_numba is not None:
        warm = np.empty(8, dtype=np.uint64)
        _kernels.fill_blocks_numba(0, 0, warm)  # compile outside the timed region
        kernels["numba"] = _kernels.fill_blocks_numba

    print(f"{'MiB':>6}  " + "  ".join(f"{name + ' GB/s':>12}" for name in kernels) + "   speedup")
    for mib in args.mib:
        out = np.empty(mib * 1024 * 1024 // 8, dtype=np.uint64)
        rates = {}
        results = {}
        for name, fn in kernels.items():
            rates[name] = out.nbytes / best_of(fn, out, args.repeat) / 1e9
            results[name] = out.copy()
        if "numba" in results:
            assert np.array_equal(results["numba"], results["numpy"]), "kernels disagree"
            speedup = f"{rates['numba'] / rates['numpy']:8.2f}x"
        else:
            speedup = "     n/a"
        print(f"{mib:>6}  " + "  ".join(f"{rates[n]:>12.3f}" for n in kernels) + f"  {speedup}")


if __name__ == "__main__":
    main()
