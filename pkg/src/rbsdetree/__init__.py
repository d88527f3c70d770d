"""Reflected BSDEs driven by a marked point process on finite scenario trees."""

from .analysis import (
    RbsdeSpec,
    apriori_check,
    brute_force_value,
    compare,
    ito_identity_check,
    solution_decomposition,
)
from .errors import (
    ConvergenceError,
    ObstacleError,
    OracleTooLargeError,
    RepresentationError,
    ScenarioError,
    SupermartingaleError,
)
from .martingale import MartingalePath, bracket, conditional_expectation, integrate, represent
from .processes import LadlagProcess, PredictableField, h2_norm, lipschitz_z_norm, s2_norm, zbar
from .rbsde import (
    AffineDriver,
    Driver,
    FrozenDriver,
    FunctionDriver,
    RbsdeSolution,
    picard_solve,
    residual,
    solve_frozen,
    verify_solution,
)
from .scenario import EventTree, Obstacle, ScenarioSpec, build_tree, validate_obstacle
from .snell import (
    Action,
    MertensParts,
    StoppingRule,
    check_flat_off,
    epsilon_optimal_time,
    mertens_decompose,
    snell_envelope,
)

__all__ = [
    "Action",
    "AffineDriver",
    "ConvergenceError",
    "Driver",
    "EventTree",
    "FrozenDriver",
    "FunctionDriver",
    "LadlagProcess",
    "MartingalePath",
    "MertensParts",
    "Obstacle",
    "ObstacleError",
    "OracleTooLargeError",
    "PredictableField",
    "RbsdeSolution",
    "RbsdeSpec",
    "RepresentationError",
    "ScenarioError",
    "ScenarioSpec",
    "StoppingRule",
    "SupermartingaleError",
    "apriori_check",
    "bracket",
    "brute_force_value",
    "build_tree",
    "check_flat_off",
    "compare",
    "conditional_expectation",
    "epsilon_optimal_time",
    "h2_norm",
    "integrate",
    "ito_identity_check",
    "lipschitz_z_norm",
    "mertens_decompose",
    "picard_solve",
    "represent",
    "residual",
    "s2_norm",
    "snell_envelope",
    "solution_decomposition",
    "solve_frozen",
    "validate_obstacle",
    "verify_solution",
    "zbar",
]

__version__ = "0.1.0"
