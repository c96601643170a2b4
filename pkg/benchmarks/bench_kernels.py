"""Compare the numba kernels with their numpy fallbacks on full solver runs.

Usage: python benchmarks/bench_kernels.py [--k-max 20000] [--repeats 3]

For each problem the run is repeated with both backends (after a warm-up
that triggers compilation) and the best wall time is reported together
with the largest relative difference of the final iterates.
"""
import argparse
import time

import numpy as np

from sviproj import _backend
from sviproj.problems import make_rotation_cartesian, make_segment_solution_affine, make_weak_sharp_lp
from sviproj.solver_tyk import TykSchedule, run_tyk
from sviproj.solver_ws import WsSchedule, run_ws


def cases():
    lp = make_weak_sharp_lp(noise_level=1.0, seed=0)
    seg = make_segment_solution_affine(0.5)
    rot = make_rotation_cartesian(0.5)
    tyk = TykSchedule.asynchronous(0.1, [1.0, 2.0], [1.0, 1.5])
    yield "ws / weak-sharp LP (n=5, 10 halfspaces)", lambda k: run_ws(
        lp.problem, lp.spec, WsSchedule.robust(1.0, 2.0), k_max=k, seed=0, save_iterates=True)
    yield "tyk / segment (m=2)", lambda k: run_tyk(
        seg.problem, seg.spec, tyk, k_max=k, seed=0, x0=seg.x0, save_iterates=True, gap=False)
    yield "tyk / rotation (m=2)", lambda k: run_tyk(
        rot.problem, rot.spec, tyk, k_max=k, seed=0, x0=rot.x0, save_iterates=True, gap=False)


def best_time(fn, k_max, repeats):
    times, rec = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        rec = fn(k_max)
        times.append(time.perf_counter() - t0)
    return min(times), rec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k-max", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    old = _backend.get_backend()
    print(f"{'case':44s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max rel diff':>13s}")
    try:
        for name, fn in cases():
            out = {}
            for backend in ("numpy", "numba"):
                _backend.set_backend(backend)
                fn(10)
                out[backend] = best_time(fn, args.k_max, args.repeats)
            x_np = out["numpy"][1].iterates["x"][-1]
            x_nb = out["numba"][1].iterates["x"][-1]
            diff = float(np.max(np.abs(x_np - x_nb) / np.maximum(np.abs(x_np), 1e-300)))
            t_np, t_nb = out["numpy"][0], out["numba"][0]
            print(f"{name:44s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.1f} {diff:13.2e}")
    finally:
        _backend.set_backend(old)


if __name__ == "__main__":
    main()
