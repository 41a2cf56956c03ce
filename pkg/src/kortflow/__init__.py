"""Numerics for the Korteweg-energy Wasserstein gradient flow on the torus."""

from .coefficients import DomainError, Params, VacuumError, delta_schedule
from .grid_ops import FD4, SPECTRAL, Grid

__all__ = ["DomainError", "FD4", "Grid", "Params", "SPECTRAL", "VacuumError", "delta_schedule"]
__version__ = "0.1.0"
