"""Limiting spectra of input-output Jacobians of deep random networks."""

from djs.activations import Activation, get_activation, nu_K, q_fixed_point, q_schedule
from djs.config import NetworkConfig
from djs.errors import BranchError, ConfigError, ConvergenceError, DJSError, NumericalError
from djs.measures import DensityGrid, EmpiricalSpectrum, SpectralMeasure, dirac, ks_distance
from djs.solver import SolverConfig, diamond, propagate_layers, resolve_density, solve_hk, theory_spectrum

__version__ = "0.1.0"

__all__ = [
    "Activation", "BranchError", "ConfigError", "ConvergenceError", "DJSError", "DensityGrid",
    "EmpiricalSpectrum", "NetworkConfig", "NumericalError", "SolverConfig", "SpectralMeasure",
    "diamond", "dirac", "get_activation", "ks_distance", "nu_K", "propagate_layers",
    "q_fixed_point", "q_schedule", "resolve_density", "solve_hk", "theory_spectrum",
]
