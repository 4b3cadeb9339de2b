"""Backward dynamic-programming pass over the controlled Markov chain.

Solves, for a terminal cost vector phi on the grid,

    V_{N_T}(k) = phi(k)
    V_j(k)     = min_u { sum_k' P_u(k,k') V_{j+1}(k') + alpha (u - anchor_j(k))^2 }

by enumeration over the control grid (the alpha-term is the optional proximal
penalty; alpha = 0 recovers the plain recursion bit-for-bit).  Ties in the
minimization are broken toward the smallest control so results are
deterministic.  Within a time layer all states are independent; the
implementation is vectorized over (control, state).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, NumericError
from .grid import Grid1D
from .markov import Dynamics1D, KernelTable, TimeGrid


@dataclass(frozen=True)
class ValueTable:
    """Discrete value function, values[j, k] = V_j(x_k), shape (N_T+1, N_X)."""

    values: np.ndarray


@dataclass(frozen=True)
class FeedbackPolicy:
    """Feedback control table, controls[j, k] = u_j(x_k), shape (N_T, N_X)."""

    controls: np.ndarray

    @classmethod
    def constant(cls, value: float, tg: TimeGrid, g: Grid1D) -> "FeedbackPolicy":
        return cls(np.full((tg.n_steps, g.n_points), float(value)))


def backward_pass(
    g: Grid1D,
    dyn: Dynamics1D,
    tg: TimeGrid,
    terminal,
    penalty=None,
    kernel: KernelTable | None = None,
):
    """Solve the backward recursion; returns (ValueTable, FeedbackPolicy).

    ``terminal`` is the grid-sampled terminal cost.  ``penalty`` is either
    None or a pair (alpha, anchor_policy) adding alpha |u - anchor|^2 to each
    stage.  ``kernel`` may carry a prebuilt transition table; it is rebuilt
    otherwise (building it dominates one-shot calls, so solvers cache it).
    """
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (g.n_points,):
        raise ContractError(
            f"terminal vector has shape {terminal.shape}, expected ({g.n_points},)"
        )
    if not np.all(np.isfinite(terminal)):
        raise NumericError("terminal cost vector contains non-finite entries")
    if kernel is None:
        kernel = KernelTable.build(g, dyn, tg)

    alpha, anchor = 0.0, None
    if penalty is not None:
        alpha, anchor_policy = penalty
        if alpha < 0:
            raise ContractError(f"penalty weight must be nonnegative, got {alpha}")
        anchor = np.asarray(anchor_policy.controls, dtype=float)
        if anchor.shape != (tg.n_steps, g.n_points):
            raise ContractError(
                f"anchor policy has shape {anchor.shape}, "
                f"expected ({tg.n_steps}, {g.n_points})"
            )

    n_t, n_x = tg.n_steps, g.n_points
    values = np.empty((n_t + 1, n_x))
    controls = np.empty((n_t, n_x))
    values[n_t] = terminal
    u_vals = kernel.controls
    for j in range(n_t - 1, -1, -1):
        q = kernel.expected_values(values[j + 1])
        if alpha != 0.0:
            q = q + alpha * (u_vals[:, None] - anchor[j][None, :]) ** 2
        best = np.argmin(q, axis=0)  # first minimum = smallest control
        v = q[best, np.arange(n_x)]
        if not np.all(np.isfinite(v)):
            k_bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise NumericError(f"non-finite value at time layer {j}, state {k_bad}")
        values[j] = v
        controls[j] = u_vals[best]
    return ValueTable(values), FeedbackPolicy(controls)


def value_at_initial(v: ValueTable, m0: np.ndarray) -> float:
    """Value of the standard problem: sum_k m0(k) V_0(k)."""
    m0 = np.asarray(m0, dtype=float)
    if m0.shape != (v.values.shape[1],):
        raise ContractError(
            f"initial distribution has shape {m0.shape}, "
            f"expected ({v.values.shape[1]},)"
        )
    return float(np.dot(m0, v.values[0]))
