"""Sonic-supersonic solutions of the 2-D steady Euler equations near a
sonic curve, via a partial hodograph transformation and a weighted-metric
fixed-point iteration, plus the exactly solvable degenerate Goursat
problem for the linear mixed-type model equation."""

from .boundary import (DerivedBoundary, GasConstants, HodographBoundary,
                       SonicBoundaryData, ValidationReport, derive_boundary,
                       to_hodograph, validate_boundary)
from .errors import (ConfigError, DomainError, DomainExit, GeometryViolation,
                     GridMismatch, InversionFailure, MarginFailure,
                     MonotonicityViolation, NoContraction, NonPositiveState,
                     NonSonicData, OutOfRange, PressureViolation,
                     SingularDenominator, SonicflowError, TooFewNodes,
                     ValidationError)
from .hodograph import (FieldTriple, F_of_t, G_of_t, HodographGrid,
                        IterationReport, apply_T, check_strong_determinacy,
                        estimate_K, lambdas, psi_phi, reconstruct_bar_fields,
                        solve_fixed_point, sources, trace_characteristic,
                        weighted_distance)
from .inverse import (PhysicalSolution, integrate_xy, jacobian_j,
                      recover_physical, resample_cartesian, transport_SB)
from .kernels import Fn1D, invert_decreasing, rk4_step, simpson_open, spline_eval
from .tricomi import (TricomiField, TricomiProblem, TricomiSolution,
                      apply_T_tricomi, make_case, recover_u, solve_tricomi,
                      tricomi_characteristics)
from .verify import (ResidualReport, residual_characteristic_form,
                     residual_decomposition_Xi, residual_euler,
                     residual_hodograph_system, residual_tricomi_integral,
                     richardson_orders)

__version__ = "0.1.0"

__all__ = [
    "GasConstants", "SonicBoundaryData", "DerivedBoundary", "HodographBoundary",
    "ValidationReport", "validate_boundary", "derive_boundary", "to_hodograph",
    "HodographGrid", "FieldTriple", "IterationReport", "F_of_t", "G_of_t",
    "psi_phi", "lambdas", "sources", "trace_characteristic", "apply_T",
    "weighted_distance", "solve_fixed_point", "reconstruct_bar_fields",
    "check_strong_determinacy", "estimate_K",
    "PhysicalSolution", "integrate_xy", "jacobian_j", "transport_SB",
    "recover_physical", "resample_cartesian",
    "TricomiProblem", "TricomiField", "TricomiSolution", "make_case",
    "tricomi_characteristics", "apply_T_tricomi", "solve_tricomi", "recover_u",
    "ResidualReport", "residual_hodograph_system", "residual_characteristic_form",
    "residual_decomposition_Xi", "residual_euler", "residual_tricomi_integral",
    "richardson_orders",
    "Fn1D", "spline_eval", "rk4_step", "simpson_open", "invert_decreasing",
    "SonicflowError", "ConfigError", "ValidationError", "NonSonicData",
    "PressureViolation", "MonotonicityViolation", "GeometryViolation",
    "DomainError", "InversionFailure", "MarginFailure", "SingularDenominator",
    "DomainExit", "NoContraction", "GridMismatch", "OutOfRange", "TooFewNodes",
    "NonPositiveState",
]
