"""Sequentially synchronized restoration of multi-microgrid distribution feeders."""

from .config import NDMGF, RR, SSDMGF, Params, RuleSet, load_params
from .feasibility import (
    FeasibleOutputs,
    HeuristicLogitProvider,
    Resolver,
    extract_warm_start,
    metrics,
    resolve_sequence,
    resolve_step,
)
from .optimizer import (
    STRATEGIES,
    InfeasibleError,
    PartialAssignment,
    SolveStats,
    brute_force_small,
    make_instance,
    make_warm_start,
    solve,
)
from .plan import RestorationPlan, objective_value, radiality_terms, validate_plan
from .report import Violation, ViolationReport
from .scenario import GridConfig, Scenario, build_features, generate_grid, split_dataset
from .sync_structure import ModeCatalogue, check_transition_safety
from .topology import Feeder, Grid, load_feeder, parse_feeder, replica_feeder

__all__ = [
    "NDMGF", "RR", "SSDMGF", "Params", "RuleSet", "load_params",
    "FeasibleOutputs", "HeuristicLogitProvider", "Resolver", "extract_warm_start", "metrics",
    "resolve_sequence", "resolve_step",
    "STRATEGIES", "InfeasibleError", "PartialAssignment", "SolveStats", "brute_force_small",
    "make_instance", "make_warm_start", "solve",
    "RestorationPlan", "objective_value", "radiality_terms", "validate_plan",
    "Violation", "ViolationReport",
    "GridConfig", "Scenario", "build_features", "generate_grid", "split_dataset",
    "ModeCatalogue", "check_transition_safety",
    "Feeder", "Grid", "load_feeder", "parse_feeder", "replica_feeder",
]

__version__ = "0.1.0"
