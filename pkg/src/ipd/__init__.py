"""Inertial accelerated primal-dual solvers for min F(x) s.t. Ax = b."""

from .core import (CapabilityError, DivergedError, FunctionDescriptor,
                   InsufficientDataError, KKTPoint, Metric, NumericalError,
                   OracleFailure, ProblemSpec, ReferenceSolution,
                   evaluate_lagrangian, kkt_residual, load_problem,
                   problem_from_dict, problem_to_dict, save_problem,
                   seminorm_sq, spectral_norm_estimate)
from .solvers import (AlgParams, IterationRecord, RunCallbacks, SolverState,
                      StopRule, Trace, run)

__all__ = [
    "AlgParams", "CapabilityError", "DivergedError", "FunctionDescriptor",
    "InsufficientDataError", "IterationRecord", "KKTPoint", "Metric",
    "NumericalError", "OracleFailure", "ProblemSpec", "ReferenceSolution",
    "RunCallbacks", "SolverState", "StopRule", "Trace",
    "evaluate_lagrangian", "kkt_residual", "load_problem",
    "problem_from_dict", "problem_to_dict", "run", "save_problem",
    "seminorm_sq", "spectral_norm_estimate",
]

__version__ = "0.1.0"
