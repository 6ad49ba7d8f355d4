"""Offline placement pipeline: LP relaxation, fraction merging and GAP rounding."""
from .lp import Infeasible, LinearProgram, LPError, solve
from .relaxation import DdljsInstance, FractionalSolution, build_relaxation, instance_from_workload, solve_relaxation
from .rounding import (
    GapInstance, IntegralSolution, InternalInconsistency, Merged, RoundingReport, assemble_integral, build_gap,
    enumerate_integral_optimum, integral_objective, merge_fractions, min_cost_assignment, ratio_bound,
    round_instance, st_round,
)
