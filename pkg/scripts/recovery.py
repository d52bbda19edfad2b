"""Parameter recovery (MLE) and filter tracking on a static diagonal BEKK.

    python scripts/recovery.py --seeds 10 --particles 4000
"""

import argparse
import time

import numpy as np

from dyncov import experiments as ex, mle, models, rapf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--length", type=int, default=2000)
    ap.add_argument("--particles", type=int, default=4000)
    ap.add_argument("--window", type=int, default=200)
    ap.add_argument("--skip-filter", action="store_true")
    args = ap.parse_args()

    cfg = ex.RecoveryConfig(T=args.length)
    print("seed  mle_a            mle_b            filt_a           filt_b           secs")
    rows = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        X = ex.recovery_data(seed, cfg)
        fit = mle.fit_bekk(X, mle.FitConfig(), Sigma0=models.initial_sigma(X[: cfg.warmup]))
        fa = fb = np.full(cfg.d, np.nan)
        if not args.skip_filter:
            tr = ex.track(X, rapf.RapfConfig(n_particles=args.particles, seed=seed), cfg.warmup, args.window)
            fa, fb = tr.final_a, tr.final_b
        rows.append(np.concatenate([fit.params.a, fit.params.b, fa, fb]))
        fmt = lambda v: " ".join(f"{x:7.4f}" for x in v)  # noqa: E731
        print(f"{seed:4d}  {fmt(fit.params.a)}  {fmt(fit.params.b)}  {fmt(fa)}  {fmt(fb)}  "
              f"{time.perf_counter() - t0:5.1f}")
    med = np.median(rows, axis=0)
    d = cfg.d
    print(f"median truth a={cfg.a} b={cfg.b}: mle a={med[:d]} b={med[d:2 * d]} "
          f"filter a={med[2 * d:3 * d]} b={med[3 * d:]}")


if __name__ == "__main__":
    main()
