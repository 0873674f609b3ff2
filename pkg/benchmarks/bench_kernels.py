"""Compare the compiled and plain-numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Each row times one public entry point on both backends (compilation is done
once up front and excluded) and checks that the two results agree.
"""

import argparse
import time

import numpy as np

from dmdlik import kernels
from dmdlik.dfm import StateSpaceModel, kalman_terms, latent_path, simulate_dfm, solve_riccati


def best_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    gen = np.random.default_rng(0)
    m2 = StateSpaceModel(np.diag([0.9, 0.5]), np.eye(2), gen.standard_normal((200, 2)), 1.0)
    A = gen.standard_normal((4, 4))
    m4 = StateSpaceModel(0.95 * A / np.max(np.abs(np.linalg.eigvals(A))), np.eye(4), gen.standard_normal((200, 4)), 0.3)
    panel = simulate_dfm(m2, 2000, 200, seed=1)
    return {
        "riccati N=4 M=200": lambda b: solve_riccati(m4, backend=b).Sigma_inf,
        "state path N=2 T=1e5": lambda b: latent_path(m2, 100_000, 500, seed=2, backend=b),
        "kalman N=2 M=200 T=2000": lambda b: kalman_terms(m2, panel, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.NUMBA is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':<26}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}{'max diff':>11}")
    for name, fn in cases().items():
        ref, fast = fn("numpy"), fn("numba")  # also triggers compilation
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(fast))))
        t_np = best_time(lambda: fn("numpy"), args.repeat)
        t_nb = best_time(lambda: fn("numba"), args.repeat)
        print(f"{name:<26}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
