"""Exact and numerical tools for the Hurwitz nearest-integer continued fraction.

Supported fields are Q(sqrt(-d)) for d in {1, 2, 3, 7, 11}.
"""

from .cf import CFExpansion, CostFunction, HurwitzCostTransformer, cf_step, empty_digit_scan, expand, orbit_cost_float
from .errors import HurwitzLabError
from .geometry import CellComplex, GenCircle, MarkovPartition, build_cells, generate_W, verify_markov
from .ring import SUPPORTED_D, FieldConfig, QuadInt, QuadRat, divmod_nearest, field_config, parse_element, qnorm, quad_gcd, round_nearest, strict_domain_contains
from .stats import OmegaSpec, dirichlet_partial, enumerate_omega, enumerate_sigma, ks_normal, modq_table, moment_table
from .transfer import PressureCurveEstimator, TransferSpectrum, assemble, dominant_eigen, lyapunov_integral, solve_s0

__version__ = "0.1.0"

__all__ = [
    "CFExpansion",
    "CellComplex",
    "CostFunction",
    "FieldConfig",
    "GenCircle",
    "HurwitzCostTransformer",
    "HurwitzLabError",
    "MarkovPartition",
    "OmegaSpec",
    "PressureCurveEstimator",
    "QuadInt",
    "QuadRat",
    "SUPPORTED_D",
    "TransferSpectrum",
    "assemble",
    "build_cells",
    "cf_step",
    "dirichlet_partial",
    "divmod_nearest",
    "dominant_eigen",
    "empty_digit_scan",
    "enumerate_omega",
    "enumerate_sigma",
    "expand",
    "field_config",
    "parse_element",
    "generate_W",
    "ks_normal",
    "lyapunov_integral",
    "modq_table",
    "moment_table",
    "orbit_cost_float",
    "qnorm",
    "quad_gcd",
    "round_nearest",
    "solve_s0",
    "strict_domain_contains",
    "verify_markov",
]
