"""Solver for terminal-cost mean-field control of 1-D controlled diffusions.

The state equation is discretized as a controlled Markov chain on a uniform
grid (two-branch noise plus barycentric redistribution); the cost is a
functional of the terminal distribution.  Outer iterations alternate a
backward dynamic-programming pass with a forward Chapman-Kolmogorov pass,
either as a gradient method over mixtures of reachable distributions or as a
penalized method producing feedback controls.
"""

from .exceptions import (
    ConfigError,
    ContractError,
    DomainError,
    EvaluationError,
    NumericError,
    SetupError,
)
from .grid import BarycentricPair, Grid1D, barycentric, project
from .markov import (
    ControlGrid,
    Dynamics1D,
    KernelTable,
    TimeGrid,
    TransitionRow,
    build_kernel,
    destinations,
    discretize_initial,
    make_distribution,
    transition_row,
)
from .hjb import FeedbackPolicy, ValueTable, backward_pass, value_at_initial
from .fp import expectation, forward_pass
from .costs import (
    COST_REGISTRY,
    CostFunctional,
    CVaRCost,
    InteractionCost,
    MomentComposition,
    Wasserstein1D,
    central_moment_cost,
    linear_cost,
    make_cost,
    mean_plus_std_cost,
    monotone_coupling,
    quadratic_interaction_cost,
    support_function,
    transport_cost,
    variance_cost,
    wasserstein_distance,
)
from .solver import (
    IterationRecord,
    Problem,
    SolveResult,
    Solver,
    SolverConfig,
    epsilon_gap,
    solve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
