"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]

Each kernel is called once to trigger compilation, then timed as the best
of ``repeat`` runs on identical inputs.  Outputs are also compared so a
speedup never hides a disagreement.
"""

import argparse
import time

import numpy as np

from bcfeed.kernels import NUMBA_KERNELS, NUMPY_KERNELS


def make_inputs(n, rng):
    raw = rng.integers(0, 2**63, size=2 * n * 6, dtype=np.uint64)
    h = (rng.standard_normal((n, 3, 3)) + 1j * rng.standard_normal((n, 3, 3))) / np.sqrt(2)
    a = np.eye(3) + h @ np.conj(np.swapaxes(h, -1, -2))
    x = (rng.standard_normal((n, 2, 3)) + 1j * rng.standard_normal((n, 2, 3))) / np.sqrt(2)
    lam = rng.exponential(size=(n, 2))
    scales = np.logspace(-1.5, 1.5, 60)
    return {
        "normals_from_raw": (raw,),
        "chol_logdet": (a,),
        "whitened_gram": (a, x),
        "log2_shift_grid_mean": (lam, scales),
    }


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if not NUMBA_KERNELS:
        raise SystemExit("numba is not available")
    inputs = make_inputs(args.samples, np.random.default_rng(args.seed))
    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn_args in inputs.items():
        NUMBA_KERNELS[name](*fn_args)  # compile
        t_np, out_np = best_of(NUMPY_KERNELS[name], fn_args, args.repeat)
        t_nb, out_nb = best_of(NUMBA_KERNELS[name], fn_args, args.repeat)
        diff = float(np.max(np.abs(np.asarray(out_np) - np.asarray(out_nb))))
        print(f"{name:<22} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} "
              f"{t_np / t_nb:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
