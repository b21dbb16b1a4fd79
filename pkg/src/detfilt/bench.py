"""Likelihood-evaluation grid runner and the metrics computed from it."""

from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from detfilt.distcore import FAMILIES, NoiseSpec, check_eta
from detfilt.errors import ConfigurationError, DetfiltError
from detfilt.likelihood import (
    DEFAULT_M_GT,
    MONTE_CARLO,
    POINTWISE,
    UXHW,
    VARSUM,
    EstimatorSpec,
    GroundTruthCache,
    estimate,
    ground_truth_stats,
)
from detfilt.statespace import STREAM_MC, SystemConfig, fmt, make_rng

EVAL_FILE = "eval.csv"
GT_FILE = "ground_truth.csv"
GRID_FILE = "grid.json"
TRUNCATED = "#TRUNCATED"

#: Resolution of each UxHw tuning paired with the MC size of equal hardware speed.
EQUAL_SPEED_M = {8: 20, 16: 76, 32: 319, 64: 1396}
#: Hardware EqMCp99 values measured on the FPGA platform, for display only.
PAPER_EQMCP99 = {8: 701, 16: 1605, 32: 3388, 64: 11046}
#: Hardware likelihood-collapse rates (%) keyed by (s_nu, eta): (UxHw, equal-speed MC).
PAPER_COLLAPSE_RATES = {
    (0.05, 8): (1.5209, 81.8912), (0.05, 16): (0.3802, 58.7068),
    (0.05, 32): (0.1901, 21.1480), (0.05, 64): (0.0000, 0.5511),
    (0.1, 8): (2.2514, 70.9223), (0.1, 16): (0.7504, 40.4857),
    (0.1, 32): (0.5628, 6.6705), (0.1, 64): (0.5628, 0.0093),
    (0.5, 8): (1.2727, 31.6281), (0.5, 16): (0.3636, 4.1343),
    (0.5, 32): (0.1818, 0.0016), (0.5, 64): (0.1818, 0.0000),
    (1.0, 8): (2.8169, 14.0448), (1.0, 16): (1.9366, 0.3906),
    (1.0, 32): (1.4084, 0.0003), (1.0, 64): (0.8802, 0.0000),
}
#: Hardware weight-collapse rates (%) at s_nu = 0.1 keyed by eta: (UxHw, equal-speed MC).
PAPER_WEIGHT_COLLAPSE = {8: (4.59, 6.59), 16: (3.70, 4.04), 32: (3.18, 3.05), 64: (3.27, 3.20)}

UXHW_FLOOR = 1e-300

EVAL_FIELDS = [
    "config_id", "t_family", "t_scale", "o_family", "o_scale", "x", "k", "eps", "z",
    "method", "param", "rep", "estimate", "ground_truth", "gt_se", "abs_error", "false_zero",
]


def default_methods() -> list[EstimatorSpec]:
    return (
        [EstimatorSpec(POINTWISE), EstimatorSpec(VARSUM)]
        + [EstimatorSpec(UXHW, eta) for eta in EQUAL_SPEED_M]
        + [EstimatorSpec(MONTE_CARLO, m) for m in EQUAL_SPEED_M.values()]
    )


@dataclass
class BenchGrid:
    """Cartesian evaluation grid over noise families, scales, states and offsets.

    Defaults reproduce the published structure (108 noise configurations,
    61 states on [-30, 30], eight offsets) at desk scale: 200 repetitions
    per stochastic method and a ground truth from 10**6 draws.
    """

    transition_families: list = field(default_factory=lambda: list(FAMILIES))
    observation_families: list = field(default_factory=lambda: list(FAMILIES))
    transition_scales: list = field(default_factory=lambda: [3.0, 1.0, 0.5])
    observation_scales: list = field(default_factory=lambda: [1.0, 0.5, 0.1, 0.05])
    locations: list = field(default_factory=lambda: np.linspace(-30.0, 30.0, 61).tolist())
    errors: list = field(default_factory=lambda: [1.0, -1.0, 0.5, -0.5, 0.1, -0.1, 0.05, -0.05])
    methods: list = field(default_factory=default_methods)
    reps: int = 200
    model: str = "gss"
    k: int = 1
    M_gt: int = DEFAULT_M_GT
    gt_seed: int = 0

    def __post_init__(self):
        self.methods = [m if isinstance(m, EstimatorSpec) else EstimatorSpec(**m) for m in self.methods]
        for fam in self.transition_families + self.observation_families:
            NoiseSpec(fam, 0.0, 1.0)
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if not self.locations or not self.errors or not self.methods:
            raise ConfigurationError("locations, errors and methods must be non-empty")
        for m in self.methods:
            if m.method == UXHW:
                check_eta(m.param)

    def paper_scale(self) -> "BenchGrid":
        return replace(self, reps=1000, M_gt=10**7)

    def configs(self) -> list[SystemConfig]:
        return [
            SystemConfig.from_model(self.model, NoiseSpec(tf, 0.0, ts), NoiseSpec(of, 0.0, os_))
            for tf in self.transition_families
            for of in self.observation_families
            for ts in self.transition_scales
            for os_ in self.observation_scales
        ]

    def reps_for(self, spec: EstimatorSpec) -> int:
        return self.reps if spec.stochastic else 1

    def expected_rows(self) -> int:
        per_point = sum(self.reps_for(m) for m in self.methods)
        return len(self.configs()) * len(self.locations) * len(self.errors) * per_point

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = [{"method": m.method, "param": m.param} for m in self.methods]
        return d


def grid_from_dict(d: dict) -> BenchGrid:
    allowed = {f.name for f in fields(BenchGrid)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown grid keys: {sorted(unknown)}")
    d = dict(d)
    if "methods" in d:
        for m in d["methods"]:
            extra = set(m) - {"method", "param"}
            if extra:
                raise ConfigurationError(f"unknown method keys: {sorted(extra)}")
    return BenchGrid(**d)


def load_grid(path) -> BenchGrid:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))


@dataclass(frozen=True)
class EvalRecord:
    config_id: str
    t_family: str
    t_scale: float
    o_family: str
    o_scale: float
    x: float
    k: int
    eps: float
    z: float
    method: str
    param: int
    rep: int
    estimate: float
    ground_truth: float
    gt_se: float

    @property
    def abs_error(self) -> float:
        return abs(self.estimate - self.ground_truth)

    @property
    def false_zero(self) -> bool:
        return self.estimate == 0.0 and self.ground_truth > 0.0

    def row(self) -> list:
        return [
            self.config_id, self.t_family, fmt(self.t_scale), self.o_family, fmt(self.o_scale),
            fmt(self.x), self.k, fmt(self.eps), fmt(self.z), self.method, self.param, self.rep,
            fmt(self.estimate), fmt(self.ground_truth), fmt(self.gt_se), fmt(self.abs_error),
            int(self.false_zero),
        ]

    @classmethod
    def from_row(cls, r: dict) -> "EvalRecord":
        rec = cls(
            r["config_id"], r["t_family"], float(r["t_scale"]), r["o_family"], float(r["o_scale"]),
            float(r["x"]), int(r["k"]), float(r["eps"]), float(r["z"]), r["method"], int(r["param"]),
            int(r["rep"]), float(r["estimate"]), float(r["ground_truth"]), float(r["gt_se"]),
        )
        if "abs_error" in r and float(r["abs_error"]) != rec.abs_error:
            raise DetfiltError(f"abs_error column disagrees with estimate/ground_truth: {r}")
        return rec


def observation_for(config: SystemConfig, x: float, k: int, eps: float) -> float:
    """Simulated measurement ``h(f(x)) - eps``."""
    return float(config.observation_ideal(config.transition_ideal(float(x), k))) - eps


def _eval_cell(task):
    """Evaluate every offset and method at one (configuration, location) cell."""
    grid, ci, li, config, known_gt, master_seed = task
    x = float(grid.locations[li])
    t, o = config.transition_noise, config.observation_noise
    records = []
    new_gt = {}
    for ei, eps in enumerate(grid.errors):
        z = observation_for(config, x, grid.k, eps)
        key = GroundTruthCache.key(config, x, grid.k, z, grid.M_gt, grid.gt_seed)
        gt = known_gt.get(key)
        if gt is None:
            gt = new_gt[key] = ground_truth_stats(z, x, grid.k, config, grid.M_gt, grid.gt_seed)
        for mi, spec in enumerate(grid.methods):
            reps = grid.reps_for(spec)
            if spec.stochastic:
                rng = make_rng(master_seed, STREAM_MC, ci, li, ei, mi)
                values = np.atleast_1d(estimate(spec, z, np.full(reps, x), grid.k, config, rng))
            else:
                values = np.atleast_1d(estimate(spec, z, x, grid.k, config))
                if spec.method == UXHW:
                    values = np.where(values < UXHW_FLOOR, 0.0, values)
            for rep, v in enumerate(values):
                records.append(EvalRecord(
                    config.config_id, t.family, t.scale, o.family, o.scale, x, grid.k, float(eps), z,
                    spec.method, spec.param, rep, float(v), gt[0], gt[1],
                ))
    return records, new_gt


def run_eval_grid(grid: BenchGrid, out_dir, seed: int = 0, workers: int = 1) -> dict:
    """Stream one :class:`EvalRecord` row per estimate to ``out_dir/eval.csv``.

    Ground-truth values are cached in ``out_dir/ground_truth.csv`` and reused
    by reruns. Cells may be evaluated by a process pool; rows are still
    written in grid order, so the output depends only on ``grid`` and ``seed``.
    If the run is interrupted, a ``#TRUNCATED`` marker row closes the file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / GRID_FILE, "w", newline="\n") as fh:
        json.dump({**grid.to_dict(), "seed": seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cache = GroundTruthCache(out / GT_FILE)
    configs = grid.configs()

    def tasks():
        for ci, config in enumerate(configs):
            for li, x in enumerate(grid.locations):
                known = {}
                for eps in grid.errors:
                    key = GroundTruthCache.key(config, x, grid.k, observation_for(config, x, grid.k, eps),
                                               grid.M_gt, grid.gt_seed)
                    value = cache.lookup(key)
                    if value is not None:
                        known[key] = value
                yield grid, ci, li, config, known, seed

    rows = false_zeros = 0
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    results = pool.map(_eval_cell, tasks()) if pool else map(_eval_cell, tasks())
    fh = open(out / EVAL_FILE, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(EVAL_FIELDS)
    try:
        for records, new_gt in results:
            for key, value in new_gt.items():
                cache.put(key, value)
            for rec in records:
                writer.writerow(rec.row())
                false_zeros += rec.false_zero
            rows += len(records)
    except BaseException:
        writer.writerow([TRUNCATED] + [""] * (len(EVAL_FIELDS) - 1))
        raise
    finally:
        fh.close()
        cache.save()
        if pool:
            pool.shutdown(cancel_futures=True)
    return {
        "path": str(out / EVAL_FILE),
        "rows": rows,
        "configs": len(configs),
        "points": len(configs) * len(grid.locations) * len(grid.errors),
        "false_zeros": false_zeros,
        "ground_truth_entries": len(cache),
    }


def read_eval_csv(path) -> list[EvalRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / EVAL_FILE
    records = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if r["config_id"] == TRUNCATED:
                raise DetfiltError(f"{path} is truncated; rerun the grid")
            records.append(EvalRecord.from_row(r))
    return records


def ecdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF as ``(threshold, fraction of values <= threshold)`` pairs."""
    a = np.sort(np.asarray(errors, dtype=float))
    if a.size == 0:
        raise ValueError("ecdf of an empty sequence")
    values, counts = np.unique(a, return_counts=True)
    fractions = np.cumsum(counts) / a.size
    fractions[-1] = 1.0
    return list(zip(values.tolist(), fractions.tolist()))


def ecdf_at(curve, threshold: float) -> float:
    """Fraction of the sample at or below ``threshold``."""
    thresholds = [t for t, _ in curve]
    i = int(np.searchsorted(thresholds, threshold, side="right"))
    return 0.0 if i == 0 else curve[i - 1][1]


def filter_records(records, t_family=None, t_scale=None, o_family=None, o_scale=None):
    return [
        r for r in records
        if (t_family is None or r.t_family == t_family)
        and (t_scale is None or r.t_scale == t_scale)
        and (o_family is None or r.o_family == o_family)
        and (o_scale is None or r.o_scale == o_scale)
    ]


def compute_collapse_rates(records) -> list[tuple[str, int, float, float]]:
    """False-zero percentage per ``(method, param, s_nu)`` group."""
    total = defaultdict(int)
    flagged = defaultdict(int)
    for r in records:
        key = (r.method, r.param, r.o_scale)
        total[key] += 1
        flagged[key] += r.false_zero
    return [(m, p, s, 100.0 * flagged[(m, p, s)] / n) for (m, p, s), n in sorted(total.items()) if n]


def point_key(r: EvalRecord) -> tuple:
    return (r.config_id, r.x, r.k, r.eps)


def eqmcp99_fraction(uxhw_errors: dict, mc_errors_at_m: dict) -> float:
    """Share of (point, rep) pairs where the MC error is no larger than UxHw's."""
    wins = n = 0
    for point, errs in mc_errors_at_m.items():
        e = np.abs(np.asarray(errs, dtype=float))
        wins += int(np.sum(e <= abs(uxhw_errors[point])))
        n += e.size
    return wins / n


def compute_eqmcp99(uxhw_errors: dict, mc_errors: dict, candidate_Ms=None, level: float = 0.99):
    """Smallest MC size whose error beats UxHw's at least ``level`` of the time.

    ``uxhw_errors`` maps point -> error; ``mc_errors`` maps M -> point -> list
    of per-rep errors. Returns ``None`` when no candidate qualifies.
    """
    Ms = sorted(mc_errors if candidate_Ms is None else candidate_Ms)
    missing = []
    for m in Ms:
        if m not in mc_errors:
            missing.append(f"M={m}: no data")
            continue
        points = set(mc_errors[m])
        missing += [f"M={m}: missing MC point {p}" for p in sorted(set(uxhw_errors) - points, key=repr)]
        missing += [f"M={m}: missing UxHw point {p}" for p in sorted(points - set(uxhw_errors), key=repr)]
    if missing:
        raise ConfigurationError("coverage mismatch:\n" + "\n".join(missing))
    for m in Ms:
        if eqmcp99_fraction(uxhw_errors, mc_errors[m]) >= level:
            return m
    return None


def eqmcp99_from_records(records, level: float = 0.99) -> list[dict]:
    """EqMCp99 per configuration and UxHw resolution found in ``records``."""
    ux = defaultdict(dict)
    mc = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for r in records:
        if r.method == UXHW:
            ux[(r.config_id, r.param)][point_key(r)] = r.abs_error
        elif r.method == MONTE_CARLO:
            mc[r.config_id][r.param][point_key(r)].append(r.abs_error)
    out = []
    for (cid, eta), errs in sorted(ux.items()):
        by_m = mc.get(cid, {})
        Ms = sorted(by_m)
        fractions = {m: eqmcp99_fraction(errs, by_m[m]) for m in Ms}
        best = compute_eqmcp99(errs, by_m, Ms, level) if Ms else None
        out.append({
            "config_id": cid, "eta": eta, "eqmcp99": best,
            "fractions": fractions, "paper_hardware": PAPER_EQMCP99.get(eta),
        })
    return out


@dataclass(frozen=True)
class Cost:
    """Abstract operation counts for one likelihood evaluation."""

    method: str
    param: int
    stages: dict
    unit: str

    @property
    def total(self) -> int:
        return sum(self.stages.values())


def cost_model(method: str, param: int = 0) -> Cost:
    """Operation counts standing in for hardware latency.

    Monte Carlo costs ``M`` sample-eval units (one transition sample plus one
    density evaluation each). UxHw is counted in atom operations: two
    quantizations of ``eta`` atoms, two additions whose cross products of
    ``eta**2`` atoms are requantized, one map and one density lookup over
    ``eta`` atoms.
    """
    spec = EstimatorSpec(method, param)
    if spec.method == MONTE_CARLO:
        return Cost(spec.method, spec.param, {"sample_eval": spec.param}, "sample-eval")
    if spec.method == UXHW:
        eta = spec.param
        stages = {"quantize": 2 * eta, "add": 2 * eta * eta, "map": eta, "pdf_eval": eta}
        return Cost(spec.method, eta, stages, "atom-op")
    return Cost(spec.method, spec.param, {"density_eval": 1}, "sample-eval")


def cost_equal_speed_m(eta: int) -> int:
    """MC size with the same op count as UxHw ``eta``, at two atom-ops per MC iteration."""
    return math.ceil(cost_model(UXHW, eta).total / 2)
