"""
Compare the numba kernels with their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--n 20000] [--directions 720] [--repeat 5]

Both paths are imported side by side from ``quantour.kernels``; the env flag
only decides which one the rest of the package binds to. Array results are checked
for exact agreement before timing, scalar reductions to 1e-12 relative.
"""

import argparse
import time

import numpy as np

from quantour import kernels
from quantour._accel import NUMBA_AVAILABLE
from quantour.dqe import direction_grid


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--directions", type=int, default=720)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    pts = np.ascontiguousarray(rng.multivariate_normal([2.9, 1.4], [[0.01, 0.003], [0.003, 0.0015]], args.n))
    dirs = np.ascontiguousarray(direction_grid(args.directions))
    k = kernels.order_index(args.n, 0.1)
    offsets = kernels.directional_kth_np(pts, dirs, k)
    r = rng.standard_normal(args.n)
    A = np.cov(rng.standard_normal((50, 6)), rowvar=False)

    cases = [
        ("directional_kth", lambda f: f(pts, dirs, k), kernels.directional_kth_np, kernels.directional_kth_nb),
        ("halfspace_inside", lambda f: f(pts, dirs, offsets, 1e-9),
         kernels.halfspace_inside_np, kernels.halfspace_inside_nb),
        ("project", lambda f: f(pts, dirs[3].copy()), kernels.project_np, kernels.project_nb),
        ("check_loss", lambda f: f(r, 0.1), kernels.check_loss_np, kernels.check_loss_nb),
        ("jacobi_eigh 6x6", lambda f: f(A.copy(), 1e-12, 100), kernels.jacobi_eigh_np, kernels.jacobi_eigh_nb),
    ]
    print(f"n={args.n} directions={args.directions} best of {args.repeat}")
    print(f"{'kernel':<18}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}  agree")
    for name, call, f_np, f_nb in cases:
        out_np, out_nb = call(f_np), call(f_nb)  # also triggers compilation
        if isinstance(out_np, tuple):
            agree = all(np.allclose(a, b, rtol=0, atol=1e-12) for a, b in zip(out_np[:2], out_nb[:2]))
        elif np.ndim(out_np) == 0:
            # reductions may sum in a different order
            agree = bool(np.isclose(out_np, out_nb, rtol=1e-12, atol=0))
        else:
            agree = bool(np.array_equal(out_np, out_nb))
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
