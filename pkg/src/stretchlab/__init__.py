"""Simulation and verification tools for an intermittent interval map with
stretched-exponential return times."""

from .map_core import MapParams, apply_map, compute_geometry, left_inverse, return_tail_exact
from .observables import ItemALipschitz, LogPower, TruncatedLogPower, make_observable
from .transfer import UlamDensity, build_ulam, integrate, invariant_density, make_grid
from .montecarlo import SimulationConfig, deviation_cell, deviation_cells
from .analysis import StretchedExponentialFit, fit_stretched_exponent

__version__ = "0.1.0"

__all__ = [
    "MapParams", "apply_map", "compute_geometry", "left_inverse", "return_tail_exact",
    "ItemALipschitz", "LogPower", "TruncatedLogPower", "make_observable",
    "UlamDensity", "build_ulam", "integrate", "invariant_density", "make_grid",
    "SimulationConfig", "deviation_cell", "deviation_cells",
    "StretchedExponentialFit", "fit_stretched_exponent",
]
