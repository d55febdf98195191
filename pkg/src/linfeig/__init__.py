"""Finite-p approximation of second-order vectorial L-infinity eigenpairs."""

__version__ = "0.1.0"

from ._accel import BACKEND
from .geometry import DomainSpec, GridSpec, build_grid, descriptors, boundary_projection
from .densities import DensityF, DensityG, make_f, make_g, check_assumptions
from .discretization import BCMode, Discretization, GridField, lp_mean_norm, linf_norm
from .normalization import normalize, normalized
from .psolver import PRunResult, SolverSettings, initial_bubble, solve_p
from .continuation import (ContinuationSettings, ContinuationTrace, extrapolate_lambda,
                           load_checkpoint, run_continuation)
from .measures import DiscreteMeasure, assemble_measures, pairing_residual
from .bounds import BoundsReport, bounds_report, mollifier_constants, sandwich_check

__all__ = [
    "BACKEND", "DomainSpec", "GridSpec", "build_grid", "descriptors", "boundary_projection",
    "DensityF", "DensityG", "make_f", "make_g", "check_assumptions",
    "BCMode", "Discretization", "GridField", "lp_mean_norm", "linf_norm",
    "normalize", "normalized",
    "PRunResult", "SolverSettings", "initial_bubble", "solve_p",
    "ContinuationSettings", "ContinuationTrace", "extrapolate_lambda", "load_checkpoint",
    "run_continuation",
    "DiscreteMeasure", "assemble_measures", "pairing_residual",
    "BoundsReport", "bounds_report", "mollifier_constants", "sandwich_check",
]
