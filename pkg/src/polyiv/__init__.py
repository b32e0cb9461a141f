"""Polynomial-moment estimation of a discrete structural function with a binary instrument."""

__version__ = "0.1.0"

from .data import Sample, load_csv, save_csv
from .dgp import DgpSpec, Gaussian, Mixture, Shifted, TwoPoint, Uniform, load_dgp
from .errors import AssumptionError, DataError, PolyIVError
from .moments import MomentTable, estimate_moments, population_table
from .pipeline import FitResult, fit
from .polysys import PolySystem, build_system
from .solver import SolverConfig, estimate_g_hat, estimate_g_tilde, solve_zero_set

__all__ = [
    "AssumptionError", "DataError", "DgpSpec", "FitResult", "Gaussian", "Mixture",
    "MomentTable", "PolyIVError", "PolySystem", "Sample", "Shifted", "SolverConfig",
    "TwoPoint", "Uniform", "build_system", "estimate_g_hat", "estimate_g_tilde",
    "estimate_moments", "fit", "load_csv", "load_dgp", "population_table", "save_csv",
    "solve_zero_set",
]
