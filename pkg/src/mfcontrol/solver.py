"""Outer iterations around the backward/forward passes.

Two methods minimize chi(m_T) over the reachable terminal distributions:

* gradient method -- each iteration linearizes chi at the current mixture
  m, solves the standard problem with terminal Dchi(m, .) to get the extreme
  candidate m~ (the descent direction), and line-searches the segment
  [m, m~]; iterates stay in the convex hull of the reachable set;
* penalized method -- keeps a genuine feedback policy; each iteration solves
  the linearized problem with a proximal term alpha |u - u_prev|^2 and adapts
  alpha multiplicatively (shrink on success, grow until the cost strictly
  decreases).

Both report per-iteration records with the optimality gap

    eps = <Dchi(m), m> - sum_k m_0(k) V_0(k),

which is nonnegative by construction and certifies eps-optimality when chi is
convex.  The transition table is built once per solve and shared by every
pass.
"""

from dataclasses import dataclass
import math
import time

import numpy as np

from .costs import CostFunctional
from .exceptions import ConfigError, ContractError, EvaluationError, NumericError
from .fp import forward_pass
from .grid import Grid1D
from .hjb import FeedbackPolicy, ValueTable, backward_pass, value_at_initial
from .markov import Dynamics1D, KernelTable, TimeGrid, discretize_initial, make_distribution

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_STALLED = "stalled"

#: A cost must drop by more than this for a penalized step to count as a
#: decrease; exact ties grow alpha, and the bounded inner loop then
#: guarantees termination (reported as "stalled") where the unbounded
#: schedule would spin.
DECREASE_TOL = 1e-12

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SolverConfig:
    """Knobs of the outer loop; defaults reproduce the reference runs."""

    algorithm: str = "gradient"  # "gradient" | "penalized"
    max_iterations: int = 100
    epsilon_tol: float = 0.0
    line_search: str = "enumerate"  # "enumerate" | "bisection"
    line_search_points: int = 65
    line_search_max_iter: int = 60
    penalty_alpha0: float = 1.0
    penalty_h_minus: float = 0.5
    penalty_h_plus: float = 2.0
    penalty_max_inner: int = 60

    def __post_init__(self):
        if self.algorithm not in ("gradient", "penalized"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be nonnegative")
        if self.epsilon_tol < 0:
            raise ConfigError("epsilon_tol must be nonnegative")
        if self.line_search not in ("enumerate", "bisection"):
            raise ConfigError(f"unknown line search {self.line_search!r}")
        if self.line_search_points < 2:
            raise ConfigError("line_search_points must be >= 2")
        if not 0.0 < self.penalty_h_minus <= 1.0:
            raise ConfigError("penalty shrink factor must lie in (0, 1]")
        if self.penalty_h_plus < 1.0:
            raise ConfigError("penalty growth factor must be >= 1")
        if self.penalty_alpha0 <= 0:
            raise ConfigError("penalty_alpha0 must be positive")
        if self.penalty_max_inner < 1:
            raise ConfigError("penalty_max_inner must be >= 1")


@dataclass
class IterationRecord:
    """One row of the convergence table."""

    iteration: int
    cost: float
    gap: float
    theta: float | None
    alpha: float | None
    passes: int
    wall_time: float


@dataclass
class Problem:
    """A complete problem instance: dynamics, grids, initial law, cost."""

    grid: Grid1D
    dynamics: Dynamics1D
    time_grid: TimeGrid
    initial_law: object
    cost: CostFunctional
    initial_policy: FeedbackPolicy | None = None

    def initial_distribution(self) -> np.ndarray:
        law = self.initial_law
        if isinstance(law, np.ndarray) and law.shape == (self.grid.n_points,):
            return make_distribution(law)
        return discretize_initial(self.grid, law)

    def default_policy(self) -> FeedbackPolicy:
        if self.initial_policy is not None:
            return self.initial_policy
        vals = self.dynamics.control_set.values
        u0 = float(vals[np.argmin(np.abs(vals))])  # control closest to 0
        return FeedbackPolicy.constant(u0, self.time_grid, self.grid)


@dataclass
class SolveResult:
    distribution: np.ndarray
    feedback_policy: FeedbackPolicy | None
    greedy_policy: FeedbackPolicy
    value_table: ValueTable
    records: list
    status: str
    backward_seconds: float = 0.0
    forward_seconds: float = 0.0
    n_backward: int = 0
    n_forward: int = 0


def epsilon_gap(dchi, m_current, v0, m0) -> float:
    """Optimality gap <Dchi, m> - <m0, V0> of the current iterate."""
    dchi = np.asarray(dchi, dtype=float)
    m_current = np.asarray(m_current, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    if not dchi.shape == m_current.shape == v0.shape == m0.shape:
        raise ContractError("epsilon_gap arguments must share one grid shape")
    return float(np.dot(dchi, m_current) - np.dot(m0, v0))


def golden_section(f, a, b, tol=1e-12, max_iter=200):
    """Golden-section minimization of f on [a, b]; returns (argmin, min)."""
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def line_search_enumerate(f, n_points):
    """Minimize f over [0, 1]: grid enumeration plus one golden refinement.

    The returned theta is an enumerated node whenever no interior probe beats
    it, so exact endpoint optima (theta = 0 or 1) are returned exactly.
    """
    thetas = np.linspace(0.0, 1.0, n_points)
    values = np.array([f(t) for t in thetas])
    best = int(np.argmin(values))
    theta_best, f_best = float(thetas[best]), float(values[best])
    lo = float(thetas[max(best - 1, 0)])
    hi = float(thetas[min(best + 1, n_points - 1)])
    if hi > lo:
        theta_g, f_g = golden_section(f, lo, hi)
        if f_g < f_best:
            theta_best, f_best = float(theta_g), float(f_g)
    return theta_best, f_best


def line_search_bisection(f, slope, max_iter):
    """Bisection on the directional derivative, for convex objectives.

    ``slope(theta)`` must be the derivative of f along the segment; its sign
    is bisected.  Falls back to the better endpoint if the slope never
    changes sign.
    """
    s0 = slope(0.0)
    if s0 >= 0.0:
        return 0.0, f(0.0)
    if slope(1.0) <= 0.0:
        return 1.0, f(1.0)
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    candidates = [(0.0, f(0.0)), (theta, f(theta)), (1.0, f(1.0))]
    return min(candidates, key=lambda p: p[1])


@dataclass
class _Linearization:
    dchi: np.ndarray
    value_table: ValueTable
    greedy_policy: FeedbackPolicy
    gap: float
    cost: float


class Solver:
    """Mutable state of one solve: current iterate, policy, penalty weight."""

    def __init__(self, problem: Problem, config: SolverConfig):
        self.problem = problem
        self.config = config
        g, dyn, tg = problem.grid, problem.dynamics, problem.time_grid
        self.kernel = KernelTable.build(g, dyn, tg)
        self.m0 = problem.initial_distribution()
        self.current_policy = problem.default_policy()
        self.records: list[IterationRecord] = []
        self.iteration = 0
        self.passes = 0
        self.backward_seconds = 0.0
        self.forward_seconds = 0.0
        self.n_backward = 0
        self.n_forward = 0
        self._start = time.perf_counter()
        self.alpha = config.penalty_alpha0
        self.stalled = False
        self.m = self._forward(self.current_policy)[-1]
        self.last_linearization: _Linearization | None = None

    # -- timed pass wrappers -------------------------------------------------

    def _backward(self, terminal, penalty=None):
        t0 = time.perf_counter()
        out = backward_pass(
            self.problem.grid,
            self.problem.dynamics,
            self.problem.time_grid,
            terminal,
            penalty=penalty,
            kernel=self.kernel,
        )
        self.backward_seconds += time.perf_counter() - t0
        self.n_backward += 1
        return out

    def _forward(self, policy):
        t0 = time.perf_counter()
        out = forward_pass(
            self.problem.grid,
            self.problem.dynamics,
            self.problem.time_grid,
            self.m0,
            policy,
            kernel=self.kernel,
        )
        self.forward_seconds += time.perf_counter() - t0
        self.n_forward += 1
        return out

    # -- shared per-iteration work --------------------------------------------

    def _linearize(self) -> _Linearization:
        g = self.problem.grid
        cost_fn = self.problem.cost
        dchi = np.asarray(cost_fn.derivative(g, self.m), dtype=float)
        table, greedy = self._backward(dchi)
        gap = epsilon_gap(dchi, self.m, table.values[0], self.m0)
        lin = _Linearization(
            dchi=dchi,
            value_table=table,
            greedy_policy=greedy,
            gap=gap,
            cost=cost_fn.evaluate(g, self.m),
        )
        self.last_linearization = lin
        return lin

    def _record(self, lin, theta=None, alpha=None, passes_before=None) -> IterationRecord:
        rec = IterationRecord(
            iteration=self.iteration,
            cost=lin.cost,
            gap=lin.gap,
            theta=theta,
            alpha=alpha,
            passes=self.passes if passes_before is None else passes_before,
            wall_time=time.perf_counter() - self._start,
        )
        self.records.append(rec)
        return rec

    def _mixture_objective(self, m_tilde):
        g, cost_fn, m = self.problem.grid, self.problem.cost, self.m

        def f(theta):
            return cost_fn.evaluate(g, (1.0 - theta) * m + theta * m_tilde)

        def slope(theta):
            mix = (1.0 - theta) * m + theta * m_tilde
            return float(np.dot(cost_fn.derivative(g, mix), m_tilde - m))

        return f, slope

    # -- one iteration of each algorithm ---------------------------------------

    def gradient_iteration(self, lin: _Linearization | None = None) -> IterationRecord:
        """One full step of the gradient method; returns its record."""
        if lin is None:
            lin = self._linearize()
        passes_before = self.passes
        m_tilde = self._forward(lin.greedy_policy)[-1]
        self.passes += 1
        f, slope = self._mixture_objective(m_tilde)
        if self.config.line_search == "enumerate":
            theta, _ = line_search_enumerate(f, self.config.line_search_points)
        else:
            theta, _ = line_search_bisection(f, slope, self.config.line_search_max_iter)
        self.m = make_distribution((1.0 - theta) * self.m + theta * m_tilde)
        rec = self._record(lin, theta=theta, passes_before=passes_before)
        self.iteration += 1
        return rec

    def penalized_iteration(self, lin: _Linearization | None = None) -> IterationRecord:
        """One full step of the penalized method; returns its record.

        Grows alpha until the cost strictly decreases; if
        ``penalty_max_inner`` growth steps cannot produce a decrease the
        iterate is left unchanged and the solver is flagged stalled
        (surfaced by ``solve``).
        """
        if lin is None:
            lin = self._linearize()
        passes_before = self.passes
        alpha_entering = self.alpha
        g, cost_fn = self.problem.grid, self.problem.cost
        alpha = self.alpha

        _, policy = self._backward(lin.dchi, penalty=(alpha, self.current_policy))
        m_new = self._forward(policy)[-1]
        self.passes += 1
        chi_new = cost_fn.evaluate(g, m_new)

        if chi_new < lin.cost - DECREASE_TOL:
            self.alpha = alpha * self.config.penalty_h_minus
        else:
            accepted = False
            for _ in range(self.config.penalty_max_inner):
                alpha *= self.config.penalty_h_plus
                _, policy = self._backward(lin.dchi, penalty=(alpha, self.current_policy))
                m_new = self._forward(policy)[-1]
                self.passes += 1
                chi_new = cost_fn.evaluate(g, m_new)
                if chi_new < lin.cost - DECREASE_TOL:
                    accepted = True
                    break
            if not accepted:
                self.stalled = True
                rec = self._record(lin, alpha=alpha_entering, passes_before=passes_before)
                self.iteration += 1
                return rec
        self.current_policy = policy
        self.m = m_new
        rec = self._record(lin, alpha=alpha_entering, passes_before=passes_before)
        self.iteration += 1
        return rec

    # -- driver ---------------------------------------------------------------

    def solve(self) -> SolveResult:
        cfg = self.config
        status = STATUS_MAX_ITER
        try:
            while True:
                lin = self._linearize()
                if lin.gap <= cfg.epsilon_tol:
                    self._record(lin, alpha=self.alpha if cfg.algorithm == "penalized" else None)
                    status = STATUS_CONVERGED
                    break
                if self.iteration >= cfg.max_iterations:
                    self._record(lin, alpha=self.alpha if cfg.algorithm == "penalized" else None)
                    status = STATUS_MAX_ITER
                    break
                if cfg.algorithm == "gradient":
                    self.gradient_iteration(lin)
                else:
                    self.penalized_iteration(lin)
                    if self.stalled:
                        status = STATUS_STALLED
                        break
        except (EvaluationError, NumericError) as e:
            raise type(e)(
                f"outer iteration {self.iteration}: {e.args[0] if e.args else e}",
                *e.args[1:],
            ) from e
        lin = self.last_linearization
        return SolveResult(
            distribution=self.m,
            feedback_policy=self.current_policy if cfg.algorithm == "penalized" else None,
            greedy_policy=lin.greedy_policy,
            value_table=lin.value_table,
            records=self.records,
            status=status,
            backward_seconds=self.backward_seconds,
            forward_seconds=self.forward_seconds,
            n_backward=self.n_backward,
            n_forward=self.n_forward,
        )


def solve(problem: Problem, config: SolverConfig) -> SolveResult:
    """Run the configured outer algorithm to completion."""
    return Solver(problem, config).solve()
