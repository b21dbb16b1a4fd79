"""State-space models, noise sampling and trajectory simulation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from detfilt.distcore import NoiseSpec
from detfilt.errors import ConfigurationError

# Stream identifiers mixed into every derived generator; see ``make_rng``.
STREAM_TRAJECTORY = 1
STREAM_FILTER = 2
STREAM_ESTIMATOR = 3
STREAM_GROUND_TRUTH = 4
STREAM_MC = 5
STREAM_PRIOR = 6

_U52 = 2.0**-52


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``SeedSequence([seed, *stream])``.

    Philox is counter based, so streams derived from distinct ``stream``
    tuples are independent and each can be replayed on its own.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seeds and stream ids must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def derive_seed(seed: int, *ids: int) -> int:
    """64-bit seed for sub-task ``ids`` of a run started with ``seed``."""
    return int(np.random.SeedSequence([int(seed), *map(int, ids)]).generate_state(1, np.uint64)[0])


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform variates on the open interval (0, 1), one generator step each."""
    k = rng.integers(0, 2**52, size=size, dtype=np.uint64)
    return (k + 0.5) * _U52


def gss_transition_ideal(x, k):
    return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * np.cos(1.2 * k)


def gss_observation_ideal(x):
    return x * x / 20.0


def gss_observation_derivative(x):
    return x / 10.0


def linear_transition_ideal(x, k):
    return 1.0 * x


def linear_observation_ideal(x):
    return 1.0 * x


def linear_observation_derivative(x):
    return np.ones_like(np.asarray(x, dtype=float))


MODELS = {
    "gss": (gss_transition_ideal, gss_observation_ideal, gss_observation_derivative),
    "linear": (linear_transition_ideal, linear_observation_ideal, linear_observation_derivative),
}

_PROBE = np.linspace(-25.0, 25.0, 41)


def _check_derivative(h: Callable, dh: Callable, rtol: float = 1e-5) -> None:
    step = 1e-5
    for x in _PROBE:
        fd = (float(h(x + step)) - float(h(x - step))) / (2 * step)
        an = float(dh(x))
        if abs(fd - an) > rtol * max(1.0, abs(an)):
            raise ConfigurationError(
                f"observation derivative disagrees with finite differences at x={x}: {an} vs {fd}"
            )


@dataclass(frozen=True)
class SystemConfig:
    """Additive-noise state-space model.

    ``transition_ideal(x, k)`` and ``observation_ideal(x)`` must accept numpy
    arrays. ``model`` names the ideal maps when the config came from
    :data:`MODELS` and is what gets serialized.
    """

    transition_ideal: Callable
    observation_ideal: Callable
    observation_ideal_derivative: Callable
    transition_noise: NoiseSpec
    observation_noise: NoiseSpec
    initial_state: float = 0.0
    model: str = "custom"

    def __post_init__(self):
        _check_derivative(self.observation_ideal, self.observation_ideal_derivative)

    @classmethod
    def from_model(cls, model: str, transition_noise: NoiseSpec, observation_noise: NoiseSpec,
                   initial_state: float = 0.0) -> "SystemConfig":
        try:
            f, h, dh = MODELS[model]
        except KeyError:
            raise ConfigurationError(f"unknown model {model!r}; expected one of {sorted(MODELS)}") from None
        return cls(f, h, dh, transition_noise, observation_noise, float(initial_state), model)

    @property
    def config_id(self) -> str:
        t, o = self.transition_noise, self.observation_noise
        return (
            f"{self.model}|{t.family}:{t.location!r}:{t.scale!r}"
            f"|{o.family}:{o.location!r}:{o.scale!r}|x0={self.initial_state!r}"
        )

    def to_dict(self) -> dict:
        if self.model not in MODELS:
            raise ConfigurationError("only configs built from a named model can be serialized")
        return {
            "model": self.model,
            "transition_noise": self.transition_noise.to_dict(),
            "observation_noise": self.observation_noise.to_dict(),
            "initial_state": self.initial_state,
        }


def gss_config(transition_noise: NoiseSpec, observation_noise: NoiseSpec, initial_state: float = 0.0):
    return SystemConfig.from_model("gss", transition_noise, observation_noise, initial_state)


def _noise_from_dict(d) -> NoiseSpec:
    if not isinstance(d, dict):
        raise ConfigurationError(f"noise spec must be an object, got {d!r}")
    unknown = set(d) - {"family", "location", "scale"}
    if unknown:
        raise ConfigurationError(f"unknown noise keys: {sorted(unknown)}")
    if "family" not in d or "scale" not in d:
        raise ConfigurationError("noise spec needs 'family' and 'scale'")
    return NoiseSpec(d["family"], float(d.get("location", 0.0)), float(d["scale"]))


def config_from_dict(d: dict) -> SystemConfig:
    allowed = {"model", "transition_noise", "observation_noise", "initial_state"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    missing = {"transition_noise", "observation_noise"} - set(d)
    if missing:
        raise ConfigurationError(f"missing config keys: {sorted(missing)}")
    return SystemConfig.from_model(
        d.get("model", "gss"),
        _noise_from_dict(d["transition_noise"]),
        _noise_from_dict(d["observation_noise"]),
        float(d.get("initial_state", 0.0)),
    )


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def pdf_noise(spec: NoiseSpec, v):
    """Analytic noise density at ``v`` (scalar or array)."""
    out = spec.pdf(v)
    return float(out) if np.ndim(out) == 0 else out


def sample_noise(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) from ``spec``; one generator step per variate."""
    out = spec.quantile(uniform_open(rng, size))
    return float(out) if size is None else out


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int
    config: SystemConfig | None = None

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ValueError("states and observations must have equal length")

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.observations, other.observations)
        )

    __hash__ = None


def simulate_trajectory(config: SystemConfig, steps: int, seed: int) -> Trajectory:
    """Simulate ``x_k = f(x_{k-1}, k) + v_k`` and ``z_k = h(x_k) + n_k`` for k = 1..steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = make_rng(seed, STREAM_TRAJECTORY)
    xs = np.empty(steps)
    zs = np.empty(steps)
    x = config.initial_state
    for k in range(1, steps + 1):
        x = float(config.transition_ideal(x, k)) + sample_noise(config.transition_noise, rng)
        z = float(config.observation_ideal(x)) + sample_noise(config.observation_noise, rng)
        xs[k - 1], zs[k - 1] = x, z
    return Trajectory(xs, zs, int(seed), config)


def fmt(v: float) -> str:
    """17 significant digits: round-trips every double."""
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "x", "z"])
        for k, (x, z) in enumerate(zip(traj.states, traj.observations), start=1):
            w.writerow([k, fmt(x), fmt(z)])


def read_trajectory_csv(path, seed: int = 0, config: SystemConfig | None = None) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ks = [int(r["k"]) for r in rows]
    if ks != list(range(1, len(ks) + 1)):
        raise ValueError(f"{Path(path).name}: k column must run 1..T")
    return Trajectory(
        np.array([float(r["x"]) for r in rows]),
        np.array([float(r["z"]) for r in rows]),
        seed,
        config,
    )


def prior_std(config: SystemConfig) -> float:
    return config.transition_noise.scale


def sample_prior(config: SystemConfig, n: int, rng: np.random.Generator, center: float | None = None):
    """Initial particles from ``N(center, s_v^2)``; ``center`` defaults to the initial state."""
    c = config.initial_state if center is None else center
    return c + prior_std(config) * sample_noise(NoiseSpec("gaussian", 0.0, 1.0), rng, n)


__all__ = [
    "SystemConfig", "Trajectory", "NoiseSpec", "make_rng", "sample_noise", "pdf_noise",
    "simulate_trajectory", "gss_config", "config_from_dict", "load_config",
    "write_trajectory_csv", "read_trajectory_csv", "gss_transition_ideal", "gss_observation_ideal",
]
