"""Compare the compiled and numpy kernel backends.

Times one right-hand side evaluation, one forward solve and one adjoint
solve on the default tsunami configuration for each backend and prints the
median of several repeats with the speedup of the compiled kernels.

    python benchmarks/bench_kernels.py [--K 200] [--repeat 5]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from ldtprob.adjoint import solve_adjoint
from ldtprob.swe import HAVE_COMPILED, get_kernels, solve_forward
from ldtprob.tsunami import TsunamiModel, TsunamiSetup


def median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench(K: int, repeat: int) -> list[tuple[str, str, float]]:
    model = TsunamiModel.from_setup(TsunamiSetup(K=K))
    S = model.measure.sqrt_cov @ np.random.default_rng(0).standard_normal(model.n_s)
    bath = model.bathymetry(S)
    m = model.mesh
    h = m.to_dg(-bath.B)
    v = np.zeros_like(h)
    spec = model.spec("regularized", 12.0)
    backends = ["numpy"] + (["cython"] if HAVE_COMPILED else [])
    rows = []
    for name in backends:
        kern = get_kernels(name)
        dh, dv, phi = (np.empty_like(h) for _ in range(3))
        rows.append((name, "rhs", median_time(
            lambda: kern.rhs(h, v, bath.B, m.hbar, model.eps, 9.81, dh, dv, phi), 50 * repeat)))

        def forward():
            return solve_forward(bath, m, model.T_F, model.dt, model.eps, model.window, backend=name)

        rows.append((name, "forward", median_time(forward, repeat)))
        tr = forward()
        rows.append((name, "adjoint", median_time(lambda: solve_adjoint(tr, spec, backend=name), repeat)))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = bench(args.K, args.repeat)
    base = {op: t for name, op, t in rows if name == "numpy"}
    print(f"{'backend':8s} {'kernel':8s} {'median [ms]':>12s} {'speedup':>8s}")
    for name, op, t in rows:
        print(f"{name:8s} {op:8s} {1e3 * t:12.3f} {base[op] / t:8.1f}x")
    if not HAVE_COMPILED:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
