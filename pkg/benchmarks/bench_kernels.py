"""Time the per-site kernels and one flow right-hand side under both backends.

Usage::

    python benchmarks/bench_kernels.py [--n 2] [--N 64] [--repeat 20]

The numba timings exclude compilation (each kernel is called once first).
JFLOW_THREADS caps the numba thread count.
"""

import argparse
import time

import numpy as np

from jflow import kernels
from jflow.flow import JFlowProblem
from jflow.geometry import LatticeGrid
from jflow.verify import random_positive_hermitian


def _best_of(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--N", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    grid = LatticeGrid(args.n, args.N)
    rng = np.random.default_rng(0)
    chi = random_positive_hermitian(rng, args.n, grid.size, complex_=False)
    g = np.eye(args.n)
    h = random_positive_hermitian(rng, args.n, grid.size, complex_=False)
    problem = JFlowProblem(grid, g, 2.0 * np.eye(args.n))
    (x,) = grid.coords[:1]
    phi = 0.1 * np.cos(x)

    cases = {
        "sigma_det": lambda: kernels.sigma_det(chi, g),
        "inverse_det": lambda: kernels.inverse_det(chi),
        "weighted_inverse": lambda: kernels.weighted_inverse(chi, g),
        "contract": lambda: kernels.contract(chi, h),
        "min_eig": lambda: kernels.min_eig(chi),
        "flow_rhs": lambda: problem.rhs(phi),
    }
    previous = kernels.get_backend()
    timings = {}
    try:
        for backend in ("numpy", "numba"):
            kernels.set_backend(backend)
            timings[backend] = {name: _best_of(fn, args.repeat) for name, fn in cases.items()}
    finally:
        kernels.set_backend(previous)

    print(f"n = {args.n}, N = {args.N}, sites = {grid.size}, best of {args.repeat}")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name in cases:
        a, b = timings["numpy"][name], timings["numba"][name]
        print(f"{name:<18}{1e3 * a:>12.3f}{1e3 * b:>12.3f}{a / b:>10.2f}")


if __name__ == "__main__":
    main()
