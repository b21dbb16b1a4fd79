"""UxHw-APF against equal-speed MC-APF and the bootstrap filter on GSS.

Usage: python3 scripts/filter_quality.py [--eta 8] [--trials 50] [--particles 400 1000]
"""

import argparse

import numpy as np

from detfilt.experiments import equal_speed_pair, filter_trials, gss_gaussian_uniform


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eta", type=int, default=8)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--particles", type=int, nargs="+", default=[400, 600, 1000])
    ap.add_argument("--s-nu", type=float, default=0.1, help="support length of the uniform observation noise")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-bootstrap", action="store_true")
    args = ap.parse_args()
    ests = list(equal_speed_pair(args.eta)) + ([] if args.no_bootstrap else [None])
    res = filter_trials(gss_gaussian_uniform(args.s_nu), ests, args.particles, args.trials, args.steps, args.seed)
    print("filter,N,trials,mean_rmse,mean_ess,weight_collapse_percent,lik_zero_percent")
    for (label, n), runs in sorted(res.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        steps = len(runs) * args.steps
        print(f"{label},{n},{len(runs)},{np.mean([r.rmse for r in runs]):.4f},"
              f"{np.mean([r.mean_ess for r in runs]):.2f},"
              f"{100 * sum(r.weight_collapse_count for r in runs) / steps:.2f},"
              f"{100 * sum(r.likelihood_zero_count for r in runs) / steps:.2f}")


if __name__ == "__main__":
    main()
