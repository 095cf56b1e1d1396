"""Time the compiled path kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--m 20000] [--level 7] [--repeat 5]
"""

import argparse
import time

import numpy as np

from stopou import _backend, _kernels_py, rng
from stopou.matrixcalc import OUModel
from stopou.pathlaw import DyadicGrid, StepLaw


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--m", type=int, default=20000, help="paths per call")
    p.add_argument("--level", type=int, default=7, help="dyadic level n (N = 2^n steps)")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    model = OUModel.kolmogorov()
    grid = DyadicGrid(1.0, args.level)
    step = StepLaw.build(model, grid)
    N, d = grid.N, model.dim
    z = rng.normals(0, 0, 0, args.m, N * d).reshape(args.m, N, d)
    shift = np.zeros((N, d))
    gmat = np.eye(d)
    lin = np.ones((1, N, d)) * grid.dt

    impls = [("python", _kernels_py)]
    if _backend.compiled_available():
        from stopou import _kernels_c
        impls.append(("cython", _kernels_c))

    print(f"m={args.m} N={N} d={d} best of {args.repeat}")
    base = {}
    for kernel in ("ar1_paths", "gauge_max_quadratic", "ar1_fused"):
        for name, mod in impls:
            if kernel == "ar1_paths":
                call = lambda: mod.ar1_paths(z, step.trans, step.chol)
            elif kernel == "gauge_max_quadratic":
                paths = _kernels_py.ar1_paths(z, step.trans, step.chol)
                call = lambda: mod.gauge_max_quadratic(paths, shift, gmat)
            else:
                call = lambda: mod.ar1_fused(z, step.trans, step.chol, shift, gmat, lin)
            t = _best(call, args.repeat)
            base.setdefault(kernel, t)
            print(f"{kernel:>20s} {name:>7s} {t * 1e3:9.2f} ms  speedup x{base[kernel] / t:5.1f}")


if __name__ == "__main__":
    main()
