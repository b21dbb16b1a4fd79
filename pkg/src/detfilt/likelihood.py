"""Proxy-likelihood estimators for the lookahead step of auxiliary filters.

Every estimator approximates the predictive likelihood

    p(z | x_prev) = integral of p(z | x) p(x | x_prev) dx

for one observation ``z`` and one or many previous states ``x``. They accept
a scalar ``x`` (returning a float) or an array of particles (returning an
array), so the filters can evaluate all particles in one call.
"""

from __future__ import annotations

import csv
import math
import os
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from detfilt import distcore
from detfilt.distcore import (
    LAPLACIAN,
    NoiseSpec,
    QuantizedDist,
    check_eta,
)
from detfilt.errors import ConfigurationError, DomainError
from detfilt.statespace import (
    STREAM_GROUND_TRUTH,
    SystemConfig,
    fmt,
    make_rng,
    sample_noise,
)

POINTWISE = "pointwise"
MONTE_CARLO = "mc"
UXHW = "uxhw"
VARSUM = "varsum"
GROUND_TRUTH = "gt"
METHODS = (POINTWISE, MONTE_CARLO, UXHW, VARSUM, GROUND_TRUTH)

_METHOD_ALIASES = {
    "pointwise": POINTWISE,
    "mc": MONTE_CARLO,
    "montecarlo": MONTE_CARLO,
    "monte_carlo": MONTE_CARLO,
    "uxhw": UXHW,
    "varsum": VARSUM,
    "gt": GROUND_TRUTH,
    "groundtruth": GROUND_TRUTH,
    "ground_truth": GROUND_TRUTH,
}

DEFAULT_M_GT = 10**6
MIN_M_GT = 10**5
_GT_CHUNK = 1 << 18


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and with what parameter.

    ``param`` is the iteration count ``M`` for Monte Carlo and ground truth
    and the resolution ``eta`` for UxHw; other methods ignore it.
    """

    method: str
    param: int = 0
    seed: int = 0

    def __post_init__(self):
        method = _METHOD_ALIASES.get(str(self.method).lower())
        if method is None:
            raise ConfigurationError(f"unknown estimator {self.method!r}")
        object.__setattr__(self, "method", method)
        param = int(self.param)
        if method in (MONTE_CARLO, GROUND_TRUTH) and param < 1:
            raise ConfigurationError(f"{method} needs M >= 1, got {self.param!r}")
        if method == UXHW:
            check_eta(param)
        if method in (POINTWISE, VARSUM):
            param = 0
        object.__setattr__(self, "param", param)

    @property
    def label(self) -> str:
        return self.method if self.param == 0 else f"{self.method}-{self.param}"

    @property
    def stochastic(self) -> bool:
        return self.method in (MONTE_CARLO, GROUND_TRUTH)


def _out(values, x):
    return float(values) if np.ndim(x) == 0 else values


def predicted_observation(x, k, config: SystemConfig):
    return config.observation_ideal(config.transition_ideal(np.asarray(x, dtype=float), k))


def lik_pointwise(z: float, x, k, config: SystemConfig):
    """Observation density at the noiseless prediction ``h(f(x, k))``."""
    pred = predicted_observation(x, k, config)
    return _out(config.observation_noise.pdf(z - pred), x)


def mc_densities(z: float, x, k, config: SystemConfig, M: int, rng: np.random.Generator):
    """Per-draw densities ``p(z | f(x, k) + v_j)``, shape ``x.shape + (M,)``."""
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    x = np.asarray(x, dtype=float)
    fx = config.transition_ideal(x, k)
    noise = sample_noise(config.transition_noise, rng, x.shape + (M,))
    pred = config.observation_ideal(fx[..., None] + noise)
    return config.observation_noise.pdf(z - pred)


def lik_mc(z: float, x, k, config: SystemConfig, M: int, rng: np.random.Generator):
    """Average of ``M`` observation densities at sampled transitions."""
    return _out(mc_densities(z, x, k, config, M, rng).mean(axis=-1), x)


@lru_cache(maxsize=256)
def _quantized(spec: NoiseSpec, eta: int) -> QuantizedDist:
    return distcore.quantize_parametric(spec, eta)


def uxhw_predictive(x: float, k, config: SystemConfig, eta: int) -> QuantizedDist:
    """Quantized predictive observation distribution for one particle."""
    eta = check_eta(eta)
    fx = float(config.transition_ideal(float(x), k))
    state = distcore.add_independent(QuantizedDist.point(fx, eta), _quantized(config.transition_noise, eta))
    observed = distcore.map_unary(state, config.observation_ideal)
    return distcore.add_independent(observed, _quantized(config.observation_noise, eta))


def _lik_uxhw_scalar(z: float, x: float, k, config: SystemConfig, eta: int) -> float:
    return distcore.evaluate_pdf(uxhw_predictive(x, k, config, eta), z)


def uxhw_predictive_batch(x, k, config: SystemConfig, eta: int) -> np.ndarray:
    """Atom positions of the predictive observation distribution per particle.

    Vectorized twin of :func:`uxhw_predictive` for the all-equal-mass case:
    lifting a point into ``eta`` atoms and adding the noise atoms reduces to
    shifting the noise atoms, and the second addition's requantization is a
    mean over consecutive blocks of ``eta`` sorted cross-product atoms.
    Returns shape ``(n, eta)``.
    """
    eta = check_eta(eta)
    v = _quantized(config.transition_noise, eta).positions
    n = _quantized(config.observation_noise, eta).positions
    fx = config.transition_ideal(np.atleast_1d(np.asarray(x, dtype=float)), k)
    obs = config.observation_ideal(fx[:, None] + v[None, :])
    if not np.all(np.isfinite(obs)):
        raise DomainError("observation model produced non-finite values")
    cross = np.sort((obs[:, :, None] + n[None, None, :]).reshape(len(fx), eta * eta), axis=1)
    return cross.reshape(len(fx), eta, eta).mean(axis=2)


def _pdf_rows(atoms: np.ndarray, z: float) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-uniform density per row; second output marks rows needing the scalar path."""
    n, eta = atoms.shape
    bounds = distcore.cell_boundaries(atoms)
    irregular = np.any(np.diff(atoms, axis=1) == 0, axis=1)
    idx = np.clip((bounds <= z).sum(axis=1) - 1, 0, eta - 1)
    rows = np.arange(n)
    width = bounds[rows, idx + 1] - bounds[rows, idx]
    inside = (z >= bounds[:, 0]) & (z <= bounds[:, -1])
    with np.errstate(divide="ignore"):
        dens = np.where(inside & (width > 0), (1.0 / eta) / np.where(width > 0, width, 1.0), 0.0)
    return dens, irregular


def lik_uxhw(z: float, x, k, config: SystemConfig, eta: int):
    """Deterministic estimate from quantized distribution arithmetic.

    The previous state enters as a point mass; the transition noise is added,
    the sum is pushed through the observation model, the observation noise is
    added and the resulting distribution's density is read off at ``z``.
    """
    if np.ndim(x) == 0:
        return _lik_uxhw_scalar(z, float(x), k, config, eta)
    xs = np.asarray(x, dtype=float)
    atoms = uxhw_predictive_batch(xs.ravel(), k, config, eta)
    dens, irregular = _pdf_rows(atoms, z)
    for i in np.flatnonzero(irregular):
        dens[i] = _lik_uxhw_scalar(z, float(xs.ravel()[i]), k, config, eta)
    return dens.reshape(xs.shape)


def varsum_moments(x, k, config: SystemConfig):
    """Mean and variance of the linearized predictive observation."""
    fx = config.transition_ideal(np.asarray(x, dtype=float), k) + config.transition_noise.location
    mean = config.observation_ideal(fx) + config.observation_noise.location
    slope = config.observation_ideal_derivative(fx)
    var = slope * slope * config.transition_noise.variance + config.observation_noise.variance
    return mean, var


def lik_varsum(z: float, x, k, config: SystemConfig):
    """Linearized (EKF-style) approximation of the predictive likelihood.

    Uses a Laplacian density when both noises are Laplacian, else a Gaussian.
    """
    mean, var = varsum_moments(x, k, config)
    if np.any(np.asarray(var) <= 0):
        raise DomainError("combined VarSum variance is zero")
    r = z - mean
    if config.transition_noise.family == LAPLACIAN and config.observation_noise.family == LAPLACIAN:
        b = np.sqrt(var / 2.0)
        dens = np.exp(-np.abs(r) / b) / (2.0 * b)
    else:
        dens = np.exp(-0.5 * r * r / var) / np.sqrt(2.0 * math.pi * var)
    return _out(dens, x)


def ground_truth_stats(z: float, x: float, k, config: SystemConfig, M_gt: int = DEFAULT_M_GT,
                       seed: int = 0) -> tuple[float, float]:
    """Large-``M`` Monte Carlo value and its standard error.

    Draws come from a dedicated stream of ``seed`` in fixed-size chunks, so
    the value depends only on ``(z, x, k, config, M_gt, seed)``.
    """
    if M_gt < MIN_M_GT:
        raise ConfigurationError(f"ground truth needs M_gt >= {MIN_M_GT}, got {M_gt}")
    rng = make_rng(seed, STREAM_GROUND_TRUTH)
    total = 0.0
    total_sq = 0.0
    left = M_gt
    while left:
        m = min(left, _GT_CHUNK)
        d = mc_densities(z, float(x), k, config, m, rng)
        total += float(d.sum())
        total_sq += float(np.dot(d, d))
        left -= m
    mean = total / M_gt
    var = max(total_sq / M_gt - mean * mean, 0.0) * M_gt / (M_gt - 1)
    return mean, math.sqrt(var / M_gt)


def lik_ground_truth(z: float, x: float, k, config: SystemConfig, M_gt: int = DEFAULT_M_GT,
                     seed: int = 0) -> float:
    return ground_truth_stats(z, x, k, config, M_gt, seed)[0]


def estimate(spec: EstimatorSpec, z: float, x, k, config: SystemConfig, rng: np.random.Generator | None = None):
    """Dispatch to the estimator named by ``spec``."""
    if spec.method == POINTWISE:
        return lik_pointwise(z, x, k, config)
    if spec.method == UXHW:
        return lik_uxhw(z, x, k, config, spec.param)
    if spec.method == VARSUM:
        return lik_varsum(z, x, k, config)
    if spec.method == MONTE_CARLO:
        if rng is None:
            raise ConfigurationError("Monte Carlo estimation needs an rng")
        return lik_mc(z, x, k, config, spec.param, rng)
    if np.ndim(x) != 0:
        return np.array([lik_ground_truth(z, xi, k, config, spec.param, spec.seed) for xi in np.ravel(x)])
    return lik_ground_truth(z, x, k, config, spec.param, spec.seed)


GT_FIELDS = ["config_id", "x", "k", "z", "M_gt", "seed", "value", "se"]


class GroundTruthCache:
    """Compute-once map from ``(config_id, x, k, z, M_gt, seed)`` to ``(value, se)``.

    Safe to share between threads: concurrent lookups of the same missing
    key wait for the first caller's computation instead of repeating it.
    """

    def __init__(self, path=None):
        self.path = os.fspath(path) if path is not None else None
        self._values: dict[tuple, tuple[float, float]] = {}
        self._pending: dict[tuple, threading.Event] = {}
        self._lock = threading.Lock()
        if self.path and os.path.exists(self.path):
            self._load()

    @staticmethod
    def key(config: SystemConfig, x: float, k, z: float, M_gt: int, seed: int) -> tuple:
        return (config.config_id, float(x), int(k), float(z), int(M_gt), int(seed))

    def _load(self):
        with open(self.path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["config_id"], float(row["x"]), int(row["k"]), float(row["z"]),
                       int(row["M_gt"]), int(row["seed"]))
                self._values[key] = (float(row["value"]), float(row["se"]))

    def __len__(self):
        return len(self._values)

    def __contains__(self, key):
        return key in self._values

    def get(self, config: SystemConfig, x: float, k, z: float, M_gt: int = DEFAULT_M_GT,
            seed: int = 0) -> tuple[float, float]:
        key = self.key(config, x, k, z, M_gt, seed)
        while True:
            with self._lock:
                if key in self._values:
                    return self._values[key]
                event = self._pending.get(key)
                if event is None:
                    event = self._pending[key] = threading.Event()
                    owner = True
                else:
                    owner = False
            if not owner:
                event.wait()
                continue
            try:
                value = ground_truth_stats(z, x, k, config, M_gt, seed)
                with self._lock:
                    self._values[key] = value
                return value
            finally:
                with self._lock:
                    del self._pending[key]
                event.set()

    def lookup(self, key: tuple):
        with self._lock:
            return self._values.get(key)

    def put(self, key: tuple, value: tuple[float, float]) -> None:
        with self._lock:
            self._values.setdefault(key, value)

    def save(self, path=None) -> None:
        path = os.fspath(path) if path is not None else self.path
        if path is None:
            raise ValueError("no path to save the ground-truth cache to")
        with self._lock:
            items = sorted(self._values.items())
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GT_FIELDS)
            for (cid, x, k, z, m, seed), (value, se) in items:
                w.writerow([cid, fmt(x), k, fmt(z), m, seed, fmt(value), fmt(se)])
        os.replace(tmp, path)


__all__ = [
    "EstimatorSpec", "GroundTruthCache", "estimate", "lik_pointwise", "lik_mc", "lik_uxhw",
    "lik_varsum", "lik_ground_truth", "ground_truth_stats", "uxhw_predictive",
]
