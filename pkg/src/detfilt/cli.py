"""Command-line entry point: ``detfilt <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from detfilt import bench
from detfilt.errors import DetfiltError
from detfilt.filters import APF, VARIANTS, filter_row, run_filter, write_filter_csv
from detfilt.likelihood import EstimatorSpec
from detfilt.report import report
from detfilt.statespace import derive_seed, load_config, simulate_trajectory, write_trajectory_csv

log = logging.getLogger("detfilt")

#: ``--param`` when omitted: the smallest equal-speed pairing.
DEFAULT_PARAM = {"uxhw": 8, "mc": 20}


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    write_trajectory_csv(simulate_trajectory(config, args.steps, args.seed), args.out)
    return 0


def cmd_eval_grid(args) -> int:
    grid = bench.load_grid(args.grid) if args.grid else bench.BenchGrid()
    if args.paper_scale:
        grid = grid.paper_scale()
    summary = bench.run_eval_grid(grid, args.out, seed=args.seed, workers=args.workers)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eqmcp99(args) -> int:
    records = bench.read_eval_csv(Path(args.input) / bench.EVAL_FILE)
    results = bench.eqmcp99_from_records(records, args.level)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["config_id", "eta", "eqmcp99", "paper_hardware"])
    for e in results:
        w.writerow([e["config_id"], e["eta"], "none" if e["eqmcp99"] is None else e["eqmcp99"],
                    e["paper_hardware"] or ""])
    return 0


def cmd_run_filter(args) -> int:
    config = load_config(args.config)
    param = DEFAULT_PARAM.get(args.estimator, 0) if args.param is None else args.param
    estimator = EstimatorSpec(args.estimator, param) if args.variant == APF else None
    rows = []
    for trial in range(args.trials):
        seed = derive_seed(args.seed, trial)
        traj = simulate_trajectory(config, args.steps, seed)
        result = run_filter(config, traj, args.variant, estimator, args.particles, seed,
                            correct=not args.uncorrected)
        rows.append(filter_row(trial, args.variant, estimator, args.particles, seed, result))
        log.info("trial %d rmse %.4f", trial, result.rmse)
    write_filter_csv(rows, args.out)
    return 0


def cmd_report(args) -> int:
    for p in report(args.input, args.out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detfilt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval-grid", help="run the likelihood evaluation grid")
    s.add_argument("--grid", help="JSON grid file (default: the full desk-scale grid)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--paper-scale", action="store_true", help="1000 reps and M_gt = 1e7")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_eval_grid)

    s = sub.add_parser("eqmcp99", help="minimum MC size that beats each UxHw tuning 99%% of the time")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--level", type=float, default=0.99)
    s.set_defaults(func=cmd_eqmcp99)

    s = sub.add_parser("run-filter", help="run filter trials on simulated trajectories")
    s.add_argument("--config", required=True)
    s.add_argument("--variant", choices=VARIANTS, default=APF)
    s.add_argument("--estimator", choices=["pointwise", "mc", "uxhw", "varsum"], default="uxhw")
    s.add_argument("--param", type=int, help="eta for uxhw (default 8), M for mc (default 20)")
    s.add_argument("--particles", type=int, default=1000)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--uncorrected", action="store_true", help="skip the second-stage weight correction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run_filter)

    s = sub.add_parser("report", help="tables and SVG figures from datasets")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except DetfiltError as e:
        print(f"detfilt: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
