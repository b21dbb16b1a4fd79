"""Deterministic distribution arithmetic for lookahead likelihoods in particle filters."""

from detfilt.distcore import NoiseSpec, QuantizedDist
from detfilt.likelihood import EstimatorSpec
from detfilt.statespace import SystemConfig, gss_config, simulate_trajectory

__all__ = ["NoiseSpec", "QuantizedDist", "EstimatorSpec", "SystemConfig", "gss_config", "simulate_trajectory"]
