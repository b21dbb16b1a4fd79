"""RMS error of the Monte Carlo estimator against ground truth as M grows.

Usage: python3 scripts/mc_convergence.py [--reps 1000] [--seed 0]
"""

import argparse

from detfilt.experiments import MC_CONVERGENCE_M, gss_gaussian_uniform, mc_convergence
from detfilt.statespace import gss_observation_ideal, gss_transition_ideal

PROBES = [(-12.0, 0.1), (-3.0, -0.1), (0.0, 0.05), (4.0, 0.5), (15.0, -0.05)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--s-nu", type=float, default=0.5, help="support length of the uniform observation noise")
    args = ap.parse_args()
    cfg = gss_gaussian_uniform(args.s_nu)
    probes = [(x, float(gss_observation_ideal(gss_transition_ideal(x, 1))) - e) for x, e in PROBES]
    rms, slope = mc_convergence(probes, cfg, MC_CONVERGENCE_M, reps=args.reps, seed=args.seed)
    print("M,rms_error")
    for m, r in zip(MC_CONVERGENCE_M, rms):
        print(f"{m},{r:.6e}")
    print(f"# log-log slope {slope:.4f} (M^-1/2 law gives -0.5)")


if __name__ == "__main__":
    main()
