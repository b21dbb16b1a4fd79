"""Deterministic arithmetic on quantized one-dimensional distributions.

A :class:`QuantizedDist` is a sorted Dirac mixture with at most ``eta`` atoms.
Every operation here is a pure function of its inputs: no randomness, no
shared state. Arithmetic between two independent variables forms the full
cross product of atoms and then collapses it back to ``eta`` equal-mass atoms
(:func:`requantize`), which keeps the representation size fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtri

from detfilt.errors import ConfigurationError, DomainError

MASS_TOL = 1e-12

#: Density reported for a distribution whose support is a single point.
DEGENERATE_DENSITY = 1e15

GAUSSIAN = "gaussian"
LAPLACIAN = "laplacian"
UNIFORM = "uniform"
FAMILIES = (GAUSSIAN, LAPLACIAN, UNIFORM)

_FAMILY_ALIASES = {
    "gaussian": GAUSSIAN,
    "normal": GAUSSIAN,
    "laplacian": LAPLACIAN,
    "laplace": LAPLACIAN,
    "uniform": UNIFORM,
}


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def check_eta(eta: int) -> int:
    if not is_power_of_two(eta) or eta < 2:
        raise ConfigurationError(f"eta must be a power of two >= 2, got {eta!r}")
    return int(eta)


@dataclass(frozen=True)
class NoiseSpec:
    """Parametric noise family with location and scale.

    ``scale`` is the standard deviation for a Gaussian, the exponential scale
    ``b`` for a Laplacian and the support length for a Uniform.
    """

    family: str
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        family = _FAMILY_ALIASES.get(str(self.family).lower())
        if family is None:
            raise ConfigurationError(f"unknown noise family {self.family!r}")
        object.__setattr__(self, "family", family)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"noise scale must be positive and finite, got {self.scale!r}")
        if not math.isfinite(self.location):
            raise DomainError(f"noise location must be finite, got {self.location!r}")
        object.__setattr__(self, "location", float(self.location))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def variance(self) -> float:
        if self.family == GAUSSIAN:
            return self.scale**2
        if self.family == LAPLACIAN:
            return 2.0 * self.scale**2
        return self.scale**2 / 12.0

    def quantile(self, p):
        """Inverse CDF, vectorized over ``p`` in (0, 1)."""
        p = np.asarray(p, dtype=float)
        if self.family == GAUSSIAN:
            q = ndtri(p)
        elif self.family == LAPLACIAN:
            q = np.where(p < 0.5, np.log(2.0 * p), -np.log(2.0 - 2.0 * p))
        else:
            q = p - 0.5
        return self.location + self.scale * q

    def cdf(self, x):
        from scipy.special import ndtr

        u = (np.asarray(x, dtype=float) - self.location) / self.scale
        if self.family == GAUSSIAN:
            return ndtr(u)
        if self.family == LAPLACIAN:
            return np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(u, 0.0)))
        return np.clip(u + 0.5, 0.0, 1.0)

    def pdf(self, x):
        u = (np.asarray(x, dtype=float) - self.location) / self.scale
        if self.family == GAUSSIAN:
            return np.exp(-0.5 * u * u) / (self.scale * math.sqrt(2.0 * math.pi))
        if self.family == LAPLACIAN:
            return np.exp(-np.abs(u)) / (2.0 * self.scale)
        return np.where(np.abs(u) <= 0.5, 1.0 / self.scale, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "location": self.location, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class QuantizedDist:
    """Sorted Dirac mixture with a fixed resolution ``eta``.

    ``positions`` and ``masses`` are read-only float arrays of equal length
    ``<= eta``; fewer atoms than ``eta`` only occur after coincident atoms
    have been merged. ``diagnostics`` collects non-fatal conditions raised
    while producing the value.
    """

    positions: np.ndarray
    masses: np.ndarray
    eta: int
    diagnostics: tuple = ()

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        mass = np.array(self.masses, dtype=float)
        if pos.ndim != 1 or pos.shape != mass.shape or pos.size == 0:
            raise ValueError("positions and masses must be non-empty 1-D arrays of equal length")
        if pos.size > self.eta:
            raise ValueError(f"{pos.size} atoms exceed eta={self.eta}")
        if not np.all(np.isfinite(pos)):
            raise DomainError("atom positions must be finite")
        if np.any(mass <= 0) or np.any(mass > 1 + MASS_TOL):
            raise ValueError("atom masses must lie in (0, 1]")
        if abs(mass.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {mass.sum()!r}, expected 1")
        if np.any(np.diff(pos) < 0):
            raise ValueError("atom positions must be sorted")
        pos.flags.writeable = False
        mass.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", mass)
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))

    def __len__(self):
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, QuantizedDist):
            return NotImplemented
        return (
            self.eta == other.eta
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.masses, other.masses)
        )

    __hash__ = None

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.masses.tolist()))

    @classmethod
    def point(cls, value: float, eta: int) -> "QuantizedDist":
        """Degenerate distribution: ``eta`` equal-mass atoms all at ``value``."""
        eta = check_eta(eta)
        return cls(np.full(eta, float(value)), np.full(eta, 1.0 / eta), eta)


def _normalized(masses: np.ndarray) -> np.ndarray:
    # Floating sums of products drift by a few ulps; fold the drift back in.
    return masses / masses.sum()


def quantize_parametric(spec: NoiseSpec, eta: int) -> QuantizedDist:
    """Equal-mass quantization at the quantile midpoints ``F^-1((2i+1)/(2 eta))``."""
    eta = check_eta(eta)
    half = eta // 2
    p = (2.0 * np.arange(half) + 1.0) / (2.0 * eta)
    lower = NoiseSpec(spec.family, 0.0, 1.0).quantile(p)
    # Mirror the standardized lower half so the atoms are exactly symmetric.
    std = np.concatenate([lower, -lower[::-1]])
    pos = spec.location + spec.scale * std
    return QuantizedDist(pos, np.full(eta, 1.0 / eta), eta)


def shift_scale(d: QuantizedDist, offset: float, factor: float) -> QuantizedDist:
    if factor == 0:
        raise DomainError("factor 0 collapses the distribution; use map_unary with a constant")
    pos = offset + factor * d.positions
    mass = d.masses
    if factor < 0:
        pos, mass = pos[::-1], mass[::-1]
    return QuantizedDist(pos, mass, d.eta, d.diagnostics)


def _group_equal_mass(positions: np.ndarray, masses: np.ndarray, groups: int) -> np.ndarray:
    """Mass-weighted means of ``groups`` contiguous slices of equal mass.

    The running integral of position over cumulative mass is piecewise
    linear, so each group's mean is an exact difference of interpolants; an
    atom straddling a group boundary contributes to both sides.
    """
    cum_mass = np.concatenate([[0.0], np.cumsum(masses)])
    cum_moment = np.concatenate([[0.0], np.cumsum(masses * positions)])
    total = cum_mass[-1]
    targets = np.linspace(0.0, total, groups + 1)
    integral = np.interp(targets, cum_mass, cum_moment)
    integral[-1] = cum_moment[-1]
    means = np.diff(integral) * (groups / total)
    # Group means of sorted atoms are sorted up to rounding.
    return np.maximum.accumulate(np.clip(means, positions[0], positions[-1]))


def requantize(positions, masses, eta: int) -> QuantizedDist:
    """Collapse a sorted weighted atom sequence to ``eta`` equal-mass atoms."""
    eta = check_eta(eta)
    pos = np.asarray(positions, dtype=float)
    mass = np.asarray(masses, dtype=float)
    if pos.size == 0:
        raise ValueError("cannot requantize an empty atom sequence")
    if np.any(np.diff(pos) < 0):
        order = np.argsort(pos, kind="stable")
        pos, mass = pos[order], mass[order]
    if pos.size < eta:
        return QuantizedDist(pos, _normalized(mass), eta, ("requantize-underfull",))
    if np.all(mass == mass[0]) and pos.size % eta == 0:
        # Equal masses: every group is a whole block of consecutive atoms.
        return QuantizedDist(pos.reshape(eta, -1).mean(axis=1), np.full(eta, 1.0 / eta), eta)
    return QuantizedDist(_group_equal_mass(pos, mass, eta), np.full(eta, 1.0 / eta), eta)


def add_independent(a: QuantizedDist, b: QuantizedDist) -> QuantizedDist:
    """Distribution of ``A + B`` for independent ``A`` and ``B``."""
    if a.eta != b.eta:
        raise ConfigurationError(f"eta mismatch: {a.eta} vs {b.eta}")
    pos = (a.positions[:, None] + b.positions[None, :]).ravel()
    mass = (a.masses[:, None] * b.masses[None, :]).ravel()
    # Sorting on (position, mass) makes the result independent of operand order.
    order = np.lexsort((mass, pos))
    out = requantize(pos[order], mass[order], a.eta)
    diag = tuple(dict.fromkeys(a.diagnostics + b.diagnostics + out.diagnostics))
    return QuantizedDist(out.positions, out.masses, out.eta, diag)


def _merge_coincident(pos: np.ndarray, mass: np.ndarray):
    keep = np.concatenate([[True], np.diff(pos) != 0])
    if keep.all():
        return pos, mass
    starts = np.flatnonzero(keep)
    return pos[starts], np.add.reduceat(mass, starts)


def map_unary(d: QuantizedDist, g: Callable) -> QuantizedDist:
    """Push every atom through ``g``; coincident images are merged."""
    pos = np.asarray(g(d.positions), dtype=float)
    if pos.shape != d.positions.shape:
        pos = np.array([float(g(x)) for x in d.positions])
    bad = np.flatnonzero(~np.isfinite(pos))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"map produced {pos[i]!r} at atom {i} (position {d.positions[i]!r})")
    order = np.argsort(pos, kind="stable")
    pos, mass = _merge_coincident(pos[order], d.masses[order])
    if pos.size < len(d):
        return requantize(pos, mass, d.eta)
    return QuantizedDist(pos, mass, d.eta, d.diagnostics)


def cell_boundaries(positions: np.ndarray) -> np.ndarray:
    """Boundaries of the piecewise-uniform cells around each atom.

    Interior boundaries are midpoints between neighbours; the outer cells
    extend by half the adjacent gap. Works on the last axis.
    """
    pos = np.asarray(positions, dtype=float)
    mid = 0.5 * (pos[..., 1:] + pos[..., :-1])
    first = pos[..., :1] - 0.5 * (pos[..., 1:2] - pos[..., :1])
    last = pos[..., -1:] + 0.5 * (pos[..., -1:] - pos[..., -2:-1])
    return np.concatenate([first, mid, last], axis=-1)


def evaluate_pdf(d: QuantizedDist, z: float) -> float:
    """Density of the piecewise-uniform reconstruction of ``d`` at ``z``.

    Cells are half-open ``[lo, hi)`` except the last, which is closed.
    """
    pos, mass = _merge_coincident(d.positions, d.masses)
    if pos.size == 1:
        return DEGENERATE_DENSITY if z == pos[0] else 0.0
    bounds = cell_boundaries(pos)
    if z < bounds[0] or z > bounds[-1]:
        return 0.0
    i = min(int(np.searchsorted(bounds, z, side="right")) - 1, pos.size - 1)
    return float(mass[i] / (bounds[i + 1] - bounds[i]))


def pdf_is_degenerate(d: QuantizedDist) -> bool:
    return bool(d.positions[0] == d.positions[-1])


def moments(d: QuantizedDist) -> tuple[float, float]:
    mean = float(np.dot(d.masses, d.positions))
    var = float(np.dot(d.masses, (d.positions - mean) ** 2))
    return mean, var
