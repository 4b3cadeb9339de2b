"""Semi-Lagrangian discretization of a controlled 1-D SDE as a Markov chain.

One Euler step of dX = b(X,u) dt + sigma(X,u) dW is replaced by a two-branch
jump: with probability 1/2 each the state moves to

    x + b(x,u) dt + sigma(x,u) sqrt(dt)   or   x + b(x,u) dt - sigma(x,u) sqrt(dt),

is projected back onto the grid hull, and is redistributed onto the two
bracketing nodes with barycentric weights.  A transition row therefore has at
most four entries.  Distributions over the grid are plain 1-D float arrays of
nonnegative weights summing to one.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math
from typing import Callable

import numpy as np
import scipy.sparse as sparse

from .exceptions import ContractError, DomainError, SetupError
from .grid import Grid1D, _interval_weights, project

#: Distributions may drift from unit mass by at most this much before
#: renormalization is considered a bug rather than rounding.
MASS_TOL = 1e-12


@dataclass(frozen=True)
class ControlGrid:
    """Uniform discretization {u_min, u_min + du, ..., u_max} of the control set."""

    u_min: float
    u_max: float
    n_controls: int

    def __post_init__(self):
        if self.n_controls < 1:
            raise DomainError(f"n_controls must be >= 1, got {self.n_controls}")
        if self.u_max < self.u_min:
            raise DomainError(f"empty control interval [{self.u_min}, {self.u_max}]")
        if self.n_controls > 1 and self.u_max == self.u_min:
            raise DomainError("more than one control requires u_max > u_min")

    @cached_property
    def values(self) -> np.ndarray:
        """Strictly increasing control values, shape (n_controls,). Read-only."""
        vals = np.linspace(self.u_min, self.u_max, self.n_controls)
        vals.setflags(write=False)
        return vals

    @classmethod
    def from_spacing(cls, u_min, u_max, du) -> "ControlGrid":
        ratio = (u_max - u_min) / du
        n_cells = round(ratio)
        if du <= 0 or abs(ratio - n_cells) > 1e-9 * max(1.0, abs(ratio)):
            raise DomainError(
                f"(u_max - u_min) = {u_max - u_min} is not a multiple of du = {du}"
            )
        return cls(float(u_min), float(u_max), n_cells + 1)

    def index_of(self, u: np.ndarray) -> np.ndarray:
        """Indices of control values in the grid (nearest match).

        Raises unless every entry coincides with a grid value to ~1e-9.
        """
        u = np.asarray(u, dtype=float)
        idx = np.clip(
            np.searchsorted(self.values, u), 0, self.n_controls - 1
        ).astype(np.int64)
        left = np.maximum(idx - 1, 0)
        take_left = np.abs(self.values[left] - u) < np.abs(self.values[idx] - u)
        idx = np.where(take_left, left, idx)
        if not np.allclose(self.values[idx], u, rtol=0.0, atol=1e-9):
            raise DomainError("control value is not a member of the control grid")
        return idx


@dataclass(frozen=True)
class TimeGrid:
    """Horizon T split into n_steps uniform steps of length dt = T / n_steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class Dynamics1D:
    """Drift b(x,u) and volatility sigma(x,u) of the controlled SDE.

    Both callables must accept scalars or numpy arrays (broadcasting); scalar
    returns are broadcast.  Lipschitz-type regularity of the continuous-time
    problem is assumed, not checked; finiteness on grid x control is checked
    eagerly when a kernel is built.
    """

    drift: Callable
    volatility: Callable
    control_set: ControlGrid


def _eval_field(fn, x, u):
    """Evaluate a drift/volatility field, broadcasting scalar results."""
    out = np.asarray(fn(x, u), dtype=float)
    shape = np.broadcast_shapes(np.shape(x), np.shape(u))
    return np.broadcast_to(out, shape) if out.shape != shape else out


def destinations(dyn: Dynamics1D, tg: TimeGrid, x, u):
    """The two jump destinations (up, down) for state x under control u.

    Accepts scalars or broadcastable arrays.  A non-finite destination aborts
    with the offending (x, u) pair, since it means the dynamics blew up.
    """
    dt = tg.dt
    b = _eval_field(dyn.drift, x, u)
    s = _eval_field(dyn.volatility, x, u)
    mean = x + b * dt
    noise = s * math.sqrt(dt)
    up, down = mean + noise, mean - noise
    bad = ~(np.isfinite(up) & np.isfinite(down))
    if np.any(bad):
        xb = np.broadcast_to(x, np.shape(bad))[bad]
        ub = np.broadcast_to(u, np.shape(bad))[bad]
        raise SetupError(
            f"dynamics produced a non-finite destination at x={xb.flat[0]}, u={ub.flat[0]}"
        )
    return up, down


def _row_data(g: Grid1D, dyn: Dynamics1D, tg: TimeGrid, x, u):
    """Destination indices and probabilities for states x under controls u.

    Returns ``(idx, w)`` with trailing dimension 4 (two branches x two
    bracketing nodes); rows are renormalized to sum to one exactly.
    """
    up, down = destinations(dyn, tg, np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    up = np.clip(up, g.x_min, g.x_max)
    down = np.clip(down, g.x_min, g.x_max)
    iu, wu = _interval_weights(g, up)
    idn, wd = _interval_weights(g, down)
    idx = np.stack([iu, iu + 1, idn, idn + 1], axis=-1)
    w = 0.5 * np.stack([wu, 1.0 - wu, wd, 1.0 - wd], axis=-1)
    total = w.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > MASS_TOL):
        raise SetupError("transition row mass deviates from 1 beyond rounding")
    w /= total
    return idx, w


@dataclass(frozen=True)
class TransitionRow:
    """Sparse row of the transition matrix: merged (node, probability) pairs."""

    entries: tuple

    @property
    def indices(self):
        return np.array([k for k, _ in self.entries], dtype=np.int64)

    @property
    def probabilities(self):
        return np.array([p for _, p in self.entries], dtype=float)

    def dense(self, n: int) -> np.ndarray:
        row = np.zeros(n)
        for k, p in self.entries:
            row[k] += p
        return row


def transition_row(g: Grid1D, dyn: Dynamics1D, tg: TimeGrid, k: int, u: float) -> TransitionRow:
    """Transition probabilities out of node k under control u.

    Both branch destinations are projected onto the hull, expanded into
    barycentric weights scaled by 1/2, and merged by destination node.
    """
    if not 0 <= k < g.n_points:
        raise ContractError(f"state index {k} outside 0..{g.n_points - 1}")
    idx, w = _row_data(g, dyn, tg, np.asarray([g.point(k)]), np.asarray([float(u)]))
    merged = {}
    for j, p in zip(idx.ravel().tolist(), w.ravel().tolist()):
        if p != 0.0:
            merged[j] = merged.get(j, 0.0) + p
    return TransitionRow(tuple(sorted(merged.items())))


def build_kernel(g: Grid1D, dyn: Dynamics1D, tg: TimeGrid, policy_slice) -> sparse.csr_matrix:
    """Row-stochastic transition matrix for one time layer of a feedback policy.

    ``policy_slice`` holds one control per grid node.  Row k of the result is
    ``transition_row(g, dyn, tg, k, policy_slice[k])``.
    """
    u = np.asarray(policy_slice, dtype=float)
    if u.shape != (g.n_points,):
        raise ContractError(
            f"policy slice has shape {u.shape}, expected ({g.n_points},)"
        )
    idx, w = _row_data(g, dyn, tg, g.points, u)
    rows = np.repeat(np.arange(g.n_points), 4)
    mat = sparse.csr_matrix(
        (w.ravel(), (rows, idx.ravel())), shape=(g.n_points, g.n_points)
    )
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


@dataclass(frozen=True)
class KernelTable:
    """All transition rows for every (control, state) pair, built once per solve.

    ``idx[a, k, :]`` and ``w[a, k, :]`` give the four destination nodes and
    probabilities out of node k under control value ``controls[a]``.  The
    table does not depend on terminal conditions, so backward and forward
    passes of every outer iteration share it.
    """

    idx: np.ndarray
    w: np.ndarray
    controls: np.ndarray

    @classmethod
    def build(cls, g: Grid1D, dyn: Dynamics1D, tg: TimeGrid) -> "KernelTable":
        vals = dyn.control_set.values
        idx, w = _row_data(g, dyn, tg, g.points[None, :], vals[:, None])
        idx.setflags(write=False)
        w.setflags(write=False)
        return cls(idx=idx, w=w, controls=vals)

    @property
    def n_states(self) -> int:
        return self.idx.shape[1]

    def expected_values(self, v_next: np.ndarray) -> np.ndarray:
        """Matrix of sum_{k'} P_u(k,k') v(k') for every control, shape (n_u, n_x)."""
        return np.einsum("aks,aks->ak", self.w, v_next[self.idx])

    def rows_for(self, control_indices: np.ndarray):
        """Rows (idx, w) selected per state by a vector of control indices."""
        ar = np.arange(self.n_states)
        return self.idx[control_indices, ar, :], self.w[control_indices, ar, :]


def make_distribution(weights, tol: float = MASS_TOL) -> np.ndarray:
    """Validate and exactly renormalize a weight vector into a distribution.

    Entries more negative than -1e-14 or total mass off by more than ``tol``
    are rejected; tiny negative rounding residue is clamped to zero.
    """
    m = np.asarray(weights, dtype=float).copy()
    if m.ndim != 1:
        raise ContractError(f"distribution must be 1-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("distribution weights must be finite")
    if np.any(m < -1e-14):
        raise DomainError(f"negative weight {m.min()} in distribution")
    np.clip(m, 0.0, None, out=m)
    total = m.sum()
    if abs(total - 1.0) > tol:
        raise DomainError(f"distribution mass {total} is not 1 within {tol}")
    return m / total


def check_distribution(m: np.ndarray, n: int):
    """Assert m is a valid distribution of length n."""
    if np.shape(m) != (n,):
        raise ContractError(f"distribution has shape {np.shape(m)}, expected ({n},)")
    make_distribution(m)


def discretize_initial(g: Grid1D, y0) -> np.ndarray:
    """Discretize an initial law onto the grid via barycentric weights.

    ``y0`` may be a scalar (point mass), a sequence of (value, mass) atoms
    whose masses sum to one within 1e-9, or a 1-D array of samples (an
    empirical law with equal weights).
    """
    if np.isscalar(y0) or (isinstance(y0, np.ndarray) and y0.ndim == 0):
        atoms = [(float(y0), 1.0)]
    else:
        items = list(y0)
        if items and np.ndim(items[0]) == 0:
            n = len(items)
            atoms = [(float(v), 1.0 / n) for v in items]
        else:
            atoms = [(float(v), float(p)) for v, p in items]
            total = sum(p for _, p in atoms)
            if abs(total - 1.0) > 1e-9:
                raise DomainError(f"atom masses sum to {total}, expected 1 within 1e-9")
    m = np.zeros(g.n_points)
    for value, mass in atoms:
        z = project(g, value)
        idx, w = _interval_weights(g, np.asarray([z], dtype=float))
        i, wl = int(idx[0]), float(w[0])
        m[i] += mass * wl
        m[i + 1] += mass * (1.0 - wl)
    return make_distribution(m, tol=1e-9)
