"""Operator-splitting finite elements for constrained evolution equations.

P2 state, P1 multipliers, edge-jump plus mu*h stabilisation, and a
two-stage step: explicit PDE evolution followed by a Newton solve that
restores the constraint.
"""

from .errors import (
    InvalidArgumentError,
    LinearSolverError,
    NoConvergenceError,
    NumericInputError,
    StagnationError,
    StepError,
)
from .mesh import Mesh, build_unit_square_mesh, refine_uniform
from .problems import BUILTINS, ProblemSpec, get_problem
from .scheme import (
    Operators,
    SchemeParams,
    SmoothField,
    State,
    apply_discrete_operator,
    constraint_enforcement_step,
    initial_state,
    pde_evolution_step,
    run,
)
from .spaces import FeFunction, FeSpace, build_space, interpolate

__all__ = [
    "BUILTINS",
    "FeFunction",
    "FeSpace",
    "InvalidArgumentError",
    "LinearSolverError",
    "Mesh",
    "NoConvergenceError",
    "NumericInputError",
    "Operators",
    "ProblemSpec",
    "SchemeParams",
    "SmoothField",
    "StagnationError",
    "State",
    "StepError",
    "apply_discrete_operator",
    "build_space",
    "build_unit_square_mesh",
    "constraint_enforcement_step",
    "get_problem",
    "initial_state",
    "interpolate",
    "pde_evolution_step",
    "refine_uniform",
    "run",
]
