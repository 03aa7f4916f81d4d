"""Time the numba kernels against their numpy twins.

Usage::

    python benchmarks/bench_kernels.py [--paths 64] [--steps 2000] [--points 20000]

Both backends are loaded side by side, so ``SKLAB_NUMBA`` is ignored here.
The first numba call is timed separately because it includes compilation
(or loading from the on-disk cache).
"""
import argparse
import time

import numpy as np

from sklab._accel import kernels
from sklab.engine import field_args
from sklab.field import CounterexampleField


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_phi(K, F, points, repeat):
    return best_of(lambda: K.phi_batch(points, F), repeat)


def bench_coupling(K, S, F, n_paths, n_steps, repeat):
    ids = np.arange(n_paths, dtype=np.int64)
    y0 = np.array([0.0, 0.0, 0.02])
    y0p = np.array([2.0**-6, 0.0, 0.02])
    dt = 4.0**-12
    return best_of(lambda: K.coupling_batch(7, ids, y0, y0p, S, F, dt, n_steps,
                                            -1.0, np.inf, np.inf, np.inf), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    S, F = field_args(CounterexampleField(0.3, n1=1, m_max=12))
    pts = np.random.default_rng(0).uniform([-1, -1, 0], [1, 1, 0.5], size=(args.points, 3))
    nb, np_ = kernels("numba"), kernels("numpy")

    t0 = time.perf_counter()
    nb.phi_batch(pts[:2], F)
    nb.coupling_batch(0, np.arange(1, dtype=np.int64), pts[0], pts[1], S, F, 1e-6, 2,
                      -1.0, np.inf, np.inf, np.inf)
    print(f"numba first call (compile or cache load): {time.perf_counter() - t0:.2f} s")

    t_nb, v_nb = bench_phi(nb, F, pts, args.repeat)
    t_np, v_np = bench_phi(np_, F, pts, args.repeat)
    print(f"phi_batch      {args.points} points: numba {t_nb * 1e3:8.2f} ms  "
          f"numpy {t_np * 1e3:8.2f} ms  speedup {t_np / t_nb:6.1f}x  "
          f"max diff {np.max(np.abs(v_nb - v_np)):.1e}")

    t_nb, o_nb = bench_coupling(nb, S, F, args.paths, args.steps, args.repeat)
    t_np, o_np = bench_coupling(np_, S, F, args.paths, args.steps, args.repeat)
    steps = args.paths * args.steps
    print(f"coupling_batch {args.paths}x{args.steps} steps: numba {steps / t_nb / 1e6:6.3f} M/s  "
          f"numpy {steps / t_np / 1e6:6.3f} M/s  speedup {t_np / t_nb:6.1f}x  "
          f"max state diff {np.max(np.abs(o_nb[2] - o_np[2])):.1e}")


if __name__ == "__main__":
    main()
