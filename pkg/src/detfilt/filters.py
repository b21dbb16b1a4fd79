"""Bootstrap and predictive-lookahead auxiliary particle filters.

Both filters resample exactly once per step. A :class:`ParticleSet` holds the
weighted particles produced by the latest update, before resampling; the next
step resamples them (by the weights for the bootstrap filter, by the
lookahead weights for the auxiliary filter) and then propagates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from detfilt.errors import CollapseError, ConfigurationError
from detfilt.likelihood import (
    GROUND_TRUTH,
    EstimatorSpec,
    estimate,
)
from detfilt.statespace import (
    STREAM_ESTIMATOR,
    STREAM_FILTER,
    STREAM_PRIOR,
    SystemConfig,
    Trajectory,
    fmt,
    make_rng,
    sample_noise,
    sample_prior,
    uniform_open,
)

BOOTSTRAP = "bootstrap"
APF = "apf"
VARIANTS = (BOOTSTRAP, APF)


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Weighted particles after the update at ``step``.

    ``weights`` are normalized. ``weight_collapse`` is set when every raw
    weight was zero and the set had to be reinitialized; ``likelihood_collapse``
    when every lookahead proxy was zero. ``zero_proxy_fraction`` is the share
    of particles whose proxy likelihood was exactly zero.
    """

    positions: np.ndarray
    weights: np.ndarray
    step: int = 0
    estimate: float = 0.0
    weight_collapse: bool = False
    likelihood_collapse: bool = False
    zero_proxy_fraction: float = 0.0

    def __len__(self):
        return len(self.positions)

    @property
    def ess(self) -> float:
        return ess(self.weights)


@dataclass
class FilterResult:
    estimates: np.ndarray
    rmse: float
    ess_trace: np.ndarray
    weight_collapse_count: int = 0
    likelihood_zero_count: int = 0
    reset_count: int = 0
    zero_proxy_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_ess(self) -> float:
        return float(np.mean(self.ess_trace))

    def __eq__(self, other):
        if not isinstance(other, FilterResult):
            return NotImplemented
        return (
            np.array_equal(self.estimates, other.estimates)
            and self.rmse == other.rmse
            and np.array_equal(self.ess_trace, other.ess_trace)
            and self.weight_collapse_count == other.weight_collapse_count
            and self.likelihood_zero_count == other.likelihood_zero_count
            and self.reset_count == other.reset_count
            and np.array_equal(self.zero_proxy_trace, other.zero_proxy_trace)
        )


def ess(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``; invariant to rescaling."""
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if not s > 0:
        raise CollapseError("all weights are zero")
    # Power-of-two rescaling is exact, so ess(2**j * w) == ess(w) bit for bit.
    w = np.ldexp(w, -np.frexp(w.max())[1])
    return float(w.sum() ** 2 / np.dot(w, w))


def resample_systematic(weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, ``N`` evenly spaced pointers."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    cum = np.cumsum(w)
    if not cum[-1] > 0:
        raise CollapseError("cannot resample collapsed weights")
    cum /= cum[-1]
    pointers = (uniform_open(rng) + np.arange(n)) / n
    idx = np.searchsorted(cum, pointers, side="right")
    return np.minimum(idx, n - 1)


def initial_particles(config: SystemConfig, n: int, rng: np.random.Generator) -> ParticleSet:
    pos = sample_prior(config, n, rng)
    return ParticleSet(pos, np.full(n, 1.0 / n), 0, float(config.initial_state))


def _propagate(parents: np.ndarray, k: int, config: SystemConfig, rng) -> np.ndarray:
    return config.transition_ideal(parents, k) + sample_noise(config.transition_noise, rng, parents.size)


def _observation_density(z: float, x: np.ndarray, config: SystemConfig) -> np.ndarray:
    return config.observation_noise.pdf(z - config.observation_ideal(x))


def _finish(positions, raw, k, z, ps: ParticleSet, config, rng, **flags) -> ParticleSet:
    total = raw.sum()
    if total > 0:
        w = raw / total
        return ParticleSet(positions, w, k, float(np.dot(w, positions)), **flags)
    # Weight collapse: restart from N(last estimate, s_v^2), push the restart
    # through one transition and weight it; uniform weights if it still fails.
    restart = sample_prior(config, len(positions), rng, center=ps.estimate)
    positions = _propagate(restart, k, config, rng)
    raw = _observation_density(z, positions, config)
    total = raw.sum()
    w = raw / total if total > 0 else np.full(len(positions), 1.0 / len(positions))
    flags["weight_collapse"] = True
    return ParticleSet(positions, w, k, float(np.dot(w, positions)), **flags)


def step_bootstrap(ps: ParticleSet, z: float, config: SystemConfig, rng: np.random.Generator) -> ParticleSet:
    k = ps.step + 1
    parents = ps.positions[resample_systematic(ps.weights, rng)]
    positions = _propagate(parents, k, config, rng)
    return _finish(positions, _observation_density(z, positions, config), k, z, ps, config, rng)


def lookahead_weights(ps: ParticleSet, proxies: np.ndarray) -> np.ndarray:
    return ps.weights * proxies


def step_apf_predictive(ps: ParticleSet, z: float, config: SystemConfig, estimator: EstimatorSpec,
                        rng: np.random.Generator, estimator_rng: np.random.Generator | None = None,
                        correct: bool = True) -> ParticleSet:
    """One auxiliary-filter step with proxy likelihoods from ``estimator``.

    Parents are drawn by systematic resampling on ``w * m``. With ``correct``
    the propagated particles are weighted by ``p(z | x) / m(parent)`` so the
    filter still targets the posterior; without it by ``p(z | x)`` alone.
    If every proxy is zero the step falls back to bootstrap selection.
    """
    if estimator.method == GROUND_TRUTH:
        raise ConfigurationError("ground truth is a benchmark oracle, not a filter estimator")
    k = ps.step + 1
    proxies = np.asarray(estimate(estimator, z, ps.positions, k, config, estimator_rng), dtype=float)
    zero_frac = float(np.mean(proxies == 0))
    lw = lookahead_weights(ps, proxies)
    collapsed = not lw.sum() > 0
    idx = resample_systematic(ps.weights if collapsed else lw, rng)
    positions = _propagate(ps.positions[idx], k, config, rng)
    raw = _observation_density(z, positions, config)
    if correct and not collapsed:
        raw = raw / proxies[idx]
    return _finish(positions, raw, k, z, ps, config, rng,
                   likelihood_collapse=collapsed, zero_proxy_fraction=zero_frac)


def rmse(truth, estimates) -> float:
    d = np.asarray(truth, dtype=float) - np.asarray(estimates, dtype=float)
    return math.sqrt(float(np.mean(d * d)))


def run_filter(config: SystemConfig, trajectory: Trajectory, variant: str = APF,
               estimator: EstimatorSpec | None = None, N: int = 1000, seed: int = 0,
               correct: bool = True) -> FilterResult:
    """Run a filter over ``trajectory`` and collect accuracy and collapse metrics.

    Prior, resampling and propagation draw from streams of ``seed`` that do
    not depend on the estimator, so two runs that differ only in the
    estimator see the same filter-side randomness.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if variant == APF and estimator is None:
        raise ConfigurationError("the auxiliary filter needs an estimator")
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    rng = make_rng(seed, STREAM_FILTER)
    est_rng = make_rng(seed, STREAM_ESTIMATOR)
    ps = initial_particles(config, N, make_rng(seed, STREAM_PRIOR))
    T = len(trajectory)
    estimates = np.empty(T)
    ess_trace = np.empty(T)
    zero_trace = np.zeros(T)
    collapses = lik_zero = 0
    for t, z in enumerate(trajectory.observations):
        if variant == BOOTSTRAP:
            ps = step_bootstrap(ps, float(z), config, rng)
        else:
            ps = step_apf_predictive(ps, float(z), config, estimator, rng, est_rng, correct)
        estimates[t] = ps.estimate
        ess_trace[t] = ps.ess
        zero_trace[t] = ps.zero_proxy_fraction
        collapses += ps.weight_collapse
        lik_zero += ps.likelihood_collapse
    return FilterResult(
        estimates=estimates,
        rmse=rmse(trajectory.states, estimates),
        ess_trace=ess_trace,
        weight_collapse_count=collapses,
        likelihood_zero_count=lik_zero,
        reset_count=collapses,
        zero_proxy_trace=zero_trace,
    )


FILTER_FIELDS = ["trial", "variant", "estimator", "param", "N", "seed", "rmse", "mean_ess",
                 "weight_collapses", "lik_zero_steps"]


def filter_row(trial: int, variant: str, estimator: EstimatorSpec | None, N: int, seed: int,
               result: FilterResult) -> list:
    return [
        trial,
        variant,
        estimator.method if estimator else "none",
        estimator.param if estimator else 0,
        N,
        seed,
        fmt(result.rmse),
        fmt(result.mean_ess),
        result.weight_collapse_count,
        result.likelihood_zero_count,
    ]


def write_filter_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FILTER_FIELDS)
        w.writerows(rows)


def read_filter_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


__all__ = [
    "ParticleSet", "FilterResult", "ess", "resample_systematic", "step_bootstrap",
    "step_apf_predictive", "run_filter", "rmse",
]
