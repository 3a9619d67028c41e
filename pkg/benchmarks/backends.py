"""Benchmark the group-convolution backends (numba jit vs pure numpy).

The lattice group convolution is the hot loop of the parametrix recursion;
this script times both backends on a Heisenberg-chart workload and reports
the agreement between them.  Backend selection goes through the same
``HEATLANDS_BACKEND`` environment flag the library uses.

Usage: python3 benchmarks/backends.py [--n 32] [--sources 2000] [--repeat 3]
"""

import argparse
import os
import time

import numpy as np

from heatlands import _accel, euclid, liegroup


def workload(n, n_sources, seed=0):
    model = liegroup.builtin_model("heisenberg3")
    grid = euclid.LatticeGrid(3, n, 2 * model.chart_radius / n)
    r2 = sum(c**2 for c in grid.points())
    psi = np.exp(-2.0 * r2).astype(complex)
    rng = np.random.default_rng(seed)
    ys = rng.uniform(-2.0, 2.0, size=(n_sources, 3))
    w = rng.standard_normal(n_sources) * grid.spacing**3
    return model, grid, psi, ys, w


def run(backend, model, grid, psi, ys, w, repeat):
    os.environ["HEATLANDS_BACKEND"] = backend
    # warm-up (includes jit compilation for numba)
    out = _accel.group_convolve(
        psi, grid.n, grid.spacing, ys, w, model,
        rmax=model.chart_radius,
    )
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = _accel.group_convolve(
            psi, grid.n, grid.spacing, ys, w, model,
            rmax=model.chart_radius,
        )
        times.append(time.perf_counter() - start)
    return out, min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=32, help="lattice points per axis")
    parser.add_argument("--sources", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    model, grid, psi, ys, w = workload(args.n, args.sources)
    results = {}
    for backend in ("numpy", "numba"):
        try:
            out, best = run(backend, model, grid, psi, ys, w, args.repeat)
        except ImportError:
            print(f"{backend:8s} unavailable")
            continue
        results[backend] = (out, best)
        print(f"{backend:8s} {best * 1e3:10.1f} ms   "
              f"({args.sources} sources on a {args.n}^3 lattice)")
    if len(results) == 2:
        a, b = results["numpy"][0], results["numba"][0]
        scale = max(np.max(np.abs(a)), 1e-300)
        print(f"max |numpy - numba| / max|out| = "
              f"{np.max(np.abs(a - b)) / scale:.2e}")
        print(f"speedup: {results['numpy'][1] / results['numba'][1]:.1f}x")


if __name__ == "__main__":
    main()
