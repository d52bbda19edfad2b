"""Per-step filter wall time as a function of particle count and dimension.

    python scripts/particle_scaling.py --dims 2 5 --particles 1000 3000 9000
"""

import argparse

import numpy as np

from dyncov import rapf


def step_time(X, n, reps):
    best = np.inf
    for _ in range(reps):
        res = rapf.run_filter(X, rapf.RapfConfig(n_particles=n, seed=1))
        best = min(best, float(np.median([r.elapsed_seconds for r in res.records[2:]])))
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[2, 5])
    ap.add_argument("--particles", type=int, nargs="+", default=[1000, 3000, 9000])
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()

    print("d,n_particles,seconds_per_step,ratio_to_smallest")
    for d in args.dims:
        X = np.random.default_rng(d).standard_normal((args.steps, d))
        base = None
        for n in args.particles:
            t = step_time(X, n, args.reps)
            base = base or t
            print(f"{d},{n},{t:.6f},{t / base:.3f}")


if __name__ == "__main__":
    main()
