"""Forward Chapman-Kolmogorov pass: push a distribution through the chain.

Given a feedback policy u, the state's law evolves by m_{j+1} = P_{u_j}^T m_j.
Every layer is renormalized to unit mass (the sparse scatter-add loses at most
~1e-15 per step to rounding) and checked for nonnegativity, so downstream
cost evaluations always see valid distributions.
"""

import warnings

import numpy as np

from .exceptions import ContractError
from .grid import Grid1D
from .hjb import FeedbackPolicy
from .markov import Dynamics1D, KernelTable, TimeGrid, make_distribution

#: Mass sitting on the hull boundary beyond this triggers a warning: it means
#: the grid is too narrow and projection is piling probability at the edges.
BOUNDARY_MASS_WARN = 1e-8


def forward_pass(
    g: Grid1D,
    dyn: Dynamics1D,
    tg: TimeGrid,
    m0: np.ndarray,
    policy: FeedbackPolicy,
    kernel: KernelTable | None = None,
):
    """Full trajectory (m_0, ..., m_{N_T}) under the given feedback policy."""
    m = make_distribution(m0)
    if m.shape != (g.n_points,):
        raise ContractError(
            f"initial distribution has shape {m.shape}, expected ({g.n_points},)"
        )
    controls = np.asarray(policy.controls, dtype=float)
    if controls.shape != (tg.n_steps, g.n_points):
        raise ContractError(
            f"policy has shape {controls.shape}, expected ({tg.n_steps}, {g.n_points})"
        )
    if kernel is None:
        kernel = KernelTable.build(g, dyn, tg)

    trajectory = [m]
    warned = False
    for j in range(tg.n_steps):
        a = dyn.control_set.index_of(controls[j])
        idx, w = kernel.rows_for(a)
        m_next = np.zeros(g.n_points)
        np.add.at(m_next, idx, w * m[:, None])
        m_next = make_distribution(m_next)
        if not warned and m_next[0] + m_next[-1] > BOUNDARY_MASS_WARN:
            warnings.warn(
                f"probability mass {m_next[0] + m_next[-1]:.3e} on the grid "
                f"boundary at step {j + 1}; widen the state grid",
                RuntimeWarning,
                stacklevel=2,
            )
            warned = True
        trajectory.append(m_next)
        m = m_next
    return trajectory


def expectation(m: np.ndarray, phi) -> float:
    """Pairing sum_k m(k) phi(k) of a distribution with a grid function."""
    m = np.asarray(m, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if m.shape != phi.shape or m.ndim != 1:
        raise ContractError(
            f"shape mismatch between distribution {m.shape} and function {phi.shape}"
        )
    return float(np.dot(m, phi))
