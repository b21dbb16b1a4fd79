"""Desk-scale experiment drivers shared by ``scripts/`` and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from detfilt.bench import EQUAL_SPEED_M, observation_for
from detfilt.distcore import NoiseSpec
from detfilt.filters import APF, BOOTSTRAP, FilterResult, run_filter
from detfilt.likelihood import (
    MONTE_CARLO,
    UXHW,
    EstimatorSpec,
    GroundTruthCache,
    lik_mc,
    lik_uxhw,
)
from detfilt.statespace import STREAM_MC, derive_seed, gss_config, make_rng, simulate_trajectory

#: Offsets used by the desk grid: one positive and one negative at two magnitudes.
DESK_ERRORS = (0.5, -0.5, 0.1, -0.1)
DESK_LOCATIONS = tuple(np.linspace(-30.0, 30.0, 13).tolist())
MC_CONVERGENCE_M = (20, 76, 319, 1396)


def gss_gaussian_uniform(s_nu: float, s_v: float = 3.0):
    return gss_config(NoiseSpec("gaussian", 0.0, s_v), NoiseSpec("uniform", 0.0, s_nu))


def mc_convergence(probes, config, Ms=MC_CONVERGENCE_M, reps: int = 1000, seed: int = 0,
                   M_gt: int = 10**6, cache: GroundTruthCache | None = None, k: int = 1):
    """RMS error of the MC estimator against ground truth for each ``M``.

    ``probes`` is a sequence of ``(x, z)``. Returns ``(rms_errors, slope)``
    where ``slope`` is the least-squares slope of log RMS error on log M.
    """
    cache = cache or GroundTruthCache()
    sq = np.zeros(len(Ms))
    for pi, (x, z) in enumerate(probes):
        gt, _ = cache.get(config, x, k, z, M_gt, seed)
        for mi, M in enumerate(Ms):
            rng = make_rng(seed, STREAM_MC, pi, mi)
            est = lik_mc(z, np.full(reps, float(x)), k, config, M, rng)
            sq[mi] += np.sum((est - gt) ** 2)
    rms = np.sqrt(sq / (reps * len(probes)))
    slope = float(np.polyfit(np.log(Ms), np.log(rms), 1)[0])
    return rms, slope


@dataclass
class DeskGridResult:
    """Absolute errors and false-zero flags per method label on one configuration."""

    errors: dict = field(default_factory=dict)
    false_zero: dict = field(default_factory=dict)

    def median_error(self, method: str, param: int) -> float:
        return float(np.median(self.errors[(method, param)]))

    def false_zero_rate(self, method: str, param: int) -> float:
        return 100.0 * float(np.mean(self.false_zero[(method, param)]))


def desk_grid(config, locations=DESK_LOCATIONS, errors=DESK_ERRORS, etas=tuple(EQUAL_SPEED_M),
              reps: int = 200, seed: int = 0, M_gt: int = 10**6, cache: GroundTruthCache | None = None,
              k: int = 1) -> DeskGridResult:
    """UxHw and equal-speed MC errors against ground truth over a small grid."""
    cache = cache or GroundTruthCache()
    out = DeskGridResult()
    for li, x in enumerate(locations):
        for ei, eps in enumerate(errors):
            z = observation_for(config, x, k, eps)
            gt, _ = cache.get(config, x, k, z, M_gt, seed)
            for eta in etas:
                u = lik_uxhw(z, float(x), k, config, eta)
                u = 0.0 if u < 1e-300 else u
                out.errors.setdefault((UXHW, eta), []).append(abs(u - gt))
                out.false_zero.setdefault((UXHW, eta), []).append(u == 0.0 and gt > 0)
            for mi, eta in enumerate(etas):
                M = EQUAL_SPEED_M[eta]
                rng = make_rng(seed, STREAM_MC, li, ei, mi)
                est = lik_mc(z, np.full(reps, float(x)), k, config, M, rng)
                out.errors.setdefault((MONTE_CARLO, M), []).extend(np.abs(est - gt).tolist())
                out.false_zero.setdefault((MONTE_CARLO, M), []).extend(((est == 0) & (gt > 0)).tolist())
    return out


def filter_trials(config, estimators, particle_counts, trials: int, steps: int = 100,
                  seed: int = 0) -> dict:
    """Run every estimator on the same trajectories and filter-side seeds.

    Returns ``{(label, N): [FilterResult, ...]}``; ``label`` is the
    estimator label or ``"bootstrap"``.
    """
    results: dict[tuple, list[FilterResult]] = {}
    for trial in range(trials):
        tseed = derive_seed(seed, trial)
        traj = simulate_trajectory(config, steps, tseed)
        for N in particle_counts:
            for est in estimators:
                if est is None:
                    r = run_filter(config, traj, BOOTSTRAP, None, N, tseed)
                    label = BOOTSTRAP
                else:
                    r = run_filter(config, traj, APF, est, N, tseed)
                    label = est.label
                results.setdefault((label, N), []).append(r)
    return results


def equal_speed_pair(eta: int) -> tuple[EstimatorSpec, EstimatorSpec]:
    return EstimatorSpec(UXHW, eta), EstimatorSpec(MONTE_CARLO, EQUAL_SPEED_M[eta])
