"""Wall-clock comparison of the numba and numpy Euler kernels.

    python3 benchmarks/bench_simulate.py [--paths N] [--t-end T] [--repeat R]

Both backends consume identical noise, so the script also confirms their
outputs match bit for bit before reporting timings.
"""
import argparse
import math
import time

import numpy as np

from cbilab import Mechanisms, PathConfig, PointMass, TemperedPowerLaw, simulate_batch
from cbilab._kernels import euler_chunk_numba

MODELS = {
    "cir": Mechanisms(b=1.0, beta=-2.0, sigma=math.sqrt(2.0)),
    "jump-diffusion": Mechanisms(b=1.0, beta=-1.0, sigma=math.sqrt(0.5), nu=PointMass(1.0, 0.5), mu=PointMass(1.0, 0.5)),
    "tempered-stable mu": Mechanisms(b=1.0, beta=-1.0, mu=TemperedPowerLaw(1.0, 1.0, 2.5)),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--t-end", type=float, default=10.0)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if euler_chunk_numba is None:
        raise SystemExit("numba backend unavailable (is CBILAB_DISABLE_NUMBA set?)")

    print(f"{'model':<20} {'numba [s]':>10} {'numpy [s]':>10} {'speed-up':>9}  identical")
    for name, mech in MODELS.items():
        cfg = PathConfig(mech.stationary_mean(), args.t_end, args.dt, seed=1)
        simulate_batch(mech, PathConfig(1.0, 0.1, 0.01), 8, backend="numba")  # compile outside the clock
        t_nb, a = best_of(lambda: simulate_batch(mech, cfg, args.paths, backend="numba"), args.repeat)
        t_np, b = best_of(lambda: simulate_batch(mech, cfg, args.paths, backend="numpy"), args.repeat)
        same = np.array_equal(a.X, b.X) and np.array_equal(a.integral, b.integral)
        print(f"{name:<20} {t_nb:>10.3f} {t_np:>10.3f} {t_np / t_nb:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
