"""Desk-scale likelihood comparison on one noise configuration.

Prints median absolute error and false-zero rate for UxHw and its
equal-speed Monte Carlo pairing.

Usage: python3 scripts/desk_grid.py [--s-nu 0.5] [--reps 200]
"""

import argparse

from detfilt.bench import EQUAL_SPEED_M
from detfilt.experiments import desk_grid, gss_gaussian_uniform
from detfilt.likelihood import MONTE_CARLO, UXHW


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s-nu", type=float, default=0.5, help="support length of the uniform observation noise")
    ap.add_argument("--s-v", type=float, default=3.0, help="std of the Gaussian transition noise")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = desk_grid(gss_gaussian_uniform(args.s_nu, args.s_v), reps=args.reps, seed=args.seed)
    print("method,param,median_abs_error,false_zero_percent")
    for eta, m in EQUAL_SPEED_M.items():
        for method, p in ((UXHW, eta), (MONTE_CARLO, m)):
            print(f"{method},{p},{res.median_error(method, p):.6e},{res.false_zero_rate(method, p):.4f}")


if __name__ == "__main__":
    main()
