"""Cost functionals on grid distributions and their grid-sampled derivatives.

Every functional chi maps a distribution m on the state grid to a real number
and exposes the derivative as a vector (Dchi(m, x_k))_k, the only object the
backward pass needs as a terminal condition:

* ``MomentComposition`` -- chi(m) = Psi(integral phi_1 dm, ..., integral phi_N dm),
  smooth outer function over moment coordinates;
* ``Wasserstein1D`` -- optimal-transport distance (or its q-th power) to a
  fixed target, with the Kantorovich potential as sub-gradient;
* ``CVaRCost`` -- conditional value at risk of the terminal state, with the
  dual threshold's hinge function as super-gradient;
* ``InteractionCost`` -- double integral of a pairwise kernel.

Convex functionals satisfy chi(m') >= chi(m) + <Dchi(m), m' - m>, concave
ones the reverse; smooth ones match finite differences along mixtures.  Those
properties are what the outer algorithms rely on, and the test suite probes
all of them with random measures.
"""

from abc import ABC, abstractmethod
from math import comb

import numpy as np

from .exceptions import ConfigError, ContractError, EvaluationError
from .grid import Grid1D
from .hjb import backward_pass, value_at_initial
from .markov import discretize_initial

#: Below this, a variance is treated as exactly zero so that square-root
#: moment compositions stay evaluable along line searches.
VARIANCE_FLOOR = 1e-14


class CostFunctional(ABC):
    """Interface of a terminal cost chi with grid-sampled derivative."""

    @abstractmethod
    def evaluate(self, g: Grid1D, m: np.ndarray) -> float:
        """chi(m)."""

    @abstractmethod
    def derivative(self, g: Grid1D, m: np.ndarray) -> np.ndarray:
        """Vector of Dchi(m, x_k) over the grid nodes."""


def _check_weights(g: Grid1D, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (g.n_points,):
        raise ContractError(
            f"distribution has shape {m.shape}, expected ({g.n_points},)"
        )
    return m


# ---------------------------------------------------------------------------
# compositions of moment integrals


class MomentComposition(CostFunctional):
    """chi(m) = outer(y) with y_i = sum_k basis_i(x_k) m(k).

    ``basis`` is a sequence of grid-sampled vectors; ``outer`` maps the moment
    vector y to a float and ``outer_grad`` to its gradient.  Non-finite outer
    values raise :class:`EvaluationError` carrying y; factories below supply
    guarded outer functions where singularities are reachable.
    """

    def __init__(self, basis, outer, outer_grad):
        self.basis = np.atleast_2d(np.asarray(basis, dtype=float))
        self.outer = outer
        self.outer_grad = outer_grad

    def _moments(self, g, m):
        m = _check_weights(g, m)
        if self.basis.shape[1] != g.n_points:
            raise ContractError(
                f"basis sampled on {self.basis.shape[1]} nodes, grid has {g.n_points}"
            )
        return self.basis @ m

    def evaluate(self, g, m):
        y = self._moments(g, m)
        val = float(self.outer(y))
        if not np.isfinite(val):
            raise EvaluationError(f"outer function is not finite at moments y={y}", y)
        return val

    def derivative(self, g, m):
        y = self._moments(g, m)
        grad = np.asarray(self.outer_grad(y), dtype=float)
        if grad.shape != y.shape:
            raise ContractError(
                f"outer gradient has shape {grad.shape}, expected {y.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise EvaluationError(f"outer gradient is not finite at moments y={y}", y)
        return grad @ self.basis


def linear_cost(g: Grid1D, coefficients=(0.0, 1.0)) -> MomentComposition:
    """chi(m) = integral p(x) dm for the polynomial p given by coefficients."""
    phi = np.polynomial.polynomial.polyval(g.points, np.asarray(coefficients, float))
    return MomentComposition([phi], lambda y: y[0], lambda y: np.ones(1))


def variance_cost(g: Grid1D) -> MomentComposition:
    """chi(m) = Var(m) through the first two raw moments (concave)."""
    x = g.points
    return MomentComposition(
        [x, x * x],
        lambda y: y[1] - y[0] ** 2,
        lambda y: np.array([-2.0 * y[0], 1.0]),
    )


def mean_plus_std_cost(g: Grid1D, beta: float) -> MomentComposition:
    """chi(m) = mean(m) + beta * std(m); convex for beta < 0, concave for beta > 0.

    The square root is singular at zero variance; variances below
    ``VARIANCE_FLOOR`` are treated as exactly zero with zero gradient
    contribution, which keeps line-search evaluations total.
    """
    x = g.points

    def outer(y):
        var = y[1] - y[0] ** 2
        if var < VARIANCE_FLOOR:
            return y[0]
        return y[0] + beta * np.sqrt(var)

    def outer_grad(y):
        var = y[1] - y[0] ** 2
        if var < VARIANCE_FLOOR:
            return np.array([1.0, 0.0])
        std = np.sqrt(var)
        return np.array([1.0 - beta * y[0] / std, beta / (2.0 * std)])

    return MomentComposition([x, x * x], outer, outer_grad)


def central_moment_cost(g: Grid1D, order: int) -> MomentComposition:
    """r-th central moment as a composition of the raw moments y_1..y_r."""
    if order < 1:
        raise ConfigError(f"central moment order must be >= 1, got {order}")
    r = order
    basis = [g.points**i for i in range(1, r + 1)]

    def outer(y):
        total = (-y[0]) ** r
        for i in range(1, r + 1):
            total += comb(r, i) * y[i - 1] * (-y[0]) ** (r - i)
        return total

    def outer_grad(y):
        grad = np.zeros(r)
        for i in range(2, r + 1):
            grad[i - 1] = comb(r, i) * (-y[0]) ** (r - i)
        grad[0] = comb(r, 1) * (-y[0]) ** (r - 1)
        for i in range(1, r):
            grad[0] -= comb(r, i) * (r - i) * y[i - 1] * (-y[0]) ** (r - i - 1)
        grad[0] -= r * (-y[0]) ** (r - 1)
        return grad

    return MomentComposition(basis, outer, outer_grad)


# ---------------------------------------------------------------------------
# one-dimensional optimal transport


def monotone_coupling(xs, ws, ys, wt):
    """Quantile coupling between two sorted atomic measures.

    Returns ``(segments, splits)`` where segments is a list of
    ``(source_atom, target_atom, mass)`` triples in sweep order and
    ``splits[j]`` is the source atom active at the quantile boundary between
    target atoms j and j+1 (the atom whose mass splits across the boundary;
    when the boundary coincides with a source boundary, the left atom).
    """
    segments = []
    splits = []
    i = j = 0
    ri, rj = ws[0], wt[0]
    while True:
        mass = min(ri, rj)
        segments.append((i, j, mass))
        ri -= mass
        rj -= mass
        if rj <= 0.0:
            if j == len(ys) - 1:
                break
            splits.append(i)
            j += 1
            rj = wt[j]
        if ri <= 0.0:
            if i == len(xs) - 1:
                break
            i += 1
            ri = ws[i]
    return segments, splits


def transport_cost(x1, w1, x2, w2, q: float) -> float:
    """Optimal cost of moving (x1, w1) onto (x2, w2) for cost |y - x|^q."""
    x1, w1, x2, w2 = (np.asarray(a, dtype=float) for a in (x1, w1, x2, w2))
    s1, s2 = w1 > 0, w2 > 0
    xs, ws = x1[s1], w1[s1]
    ys, wt = x2[s2], w2[s2]
    segments, _ = monotone_coupling(xs, ws, ys, wt)
    return float(sum(mass * abs(xs[i] - ys[j]) ** q for i, j, mass in segments))


def wasserstein_distance(x1, w1, x2, w2, q: float = 1.0) -> float:
    """d_q between two atomic measures on the line (the q-th root)."""
    return transport_cost(x1, w1, x2, w2, q) ** (1.0 / q)


class Wasserstein1D(CostFunctional):
    """Distance to a fixed target distribution on the same grid.

    ``mode="power"`` gives chi(m) = d_q(m, target)^q, which is convex along
    mixtures with the Kantorovich potential of the transport from m to the
    target as a sub-gradient.  ``mode="root"`` gives the distance itself,
    with the potential rescaled by the chain rule 1 / (q chi^{q-1}); at
    chi(m) = 0 the zero vector is returned (a valid selection at the
    minimum).
    """

    def __init__(self, target, q: float = 2.0, mode: str = "root"):
        if q < 1:
            raise ConfigError(f"transport exponent must satisfy q >= 1, got {q}")
        if mode not in ("root", "power"):
            raise ConfigError(f"mode must be 'root' or 'power', got {mode!r}")
        self.target = np.asarray(target, dtype=float)
        self.q = float(q)
        self.mode = mode

    def _cost(self, g, m):
        m = _check_weights(g, m)
        if self.target.shape != (g.n_points,):
            raise ContractError("target distribution does not match the grid")
        return transport_cost(g.points, m, g.points, self.target, self.q)

    def evaluate(self, g, m):
        power = self._cost(g, m)
        return power ** (1.0 / self.q) if self.mode == "root" else power

    def potential(self, g, m):
        """Kantorovich potential phi of the transport from m to the target,
        sampled on every grid node, plus the target-side values psi.

        Normalization: psi vanishes at the first target atom of the coupling
        chain (potentials are defined up to a constant; all uses pair the
        potential against differences of probability measures, where the
        constant cancels).
        """
        m = _check_weights(g, m)
        if self.target.shape != (g.n_points,):
            raise ContractError("target distribution does not match the grid")
        src = m > 0
        tgt = self.target > 0
        xs, ws = g.points[src], m[src]
        ys, wt = g.points[tgt], self.target[tgt]
        _, splits = monotone_coupling(xs, ws, ys, wt)
        psi = np.zeros(len(ys))
        for j, i_star in enumerate(splits):
            x_star = xs[i_star]
            psi[j + 1] = psi[j] + (
                abs(x_star - ys[j + 1]) ** self.q - abs(x_star - ys[j]) ** self.q
            )
        phi = np.min(
            np.abs(g.points[:, None] - ys[None, :]) ** self.q - psi[None, :], axis=1
        )
        return phi, psi, ys, wt

    def derivative(self, g, m):
        phi, _, _, _ = self.potential(g, m)
        if self.mode == "power":
            return phi
        dist = self._cost(g, m) ** (1.0 / self.q)
        if dist == 0.0:
            return np.zeros(g.n_points)
        return phi / (self.q * dist ** (self.q - 1.0))


# ---------------------------------------------------------------------------
# conditional value at risk


class CVaRCost(CostFunctional):
    """Conditional value at risk of the state at level beta (concave in m).

    Evaluated through the dual form
    CVaR(m) = (1/(1-beta)) min_psi { integral (x - psi)_+ dm + (1-beta) psi },
    whose minimizers form the value-at-risk interval; the smallest one (the
    first grid atom with cumulative mass >= beta) is used as deterministic
    threshold for both the value and the super-gradient (x - psi)_+/(1-beta).
    """

    def __init__(self, level: float):
        if not 0.0 < level < 1.0:
            raise ConfigError(f"CVaR level must lie in (0, 1), got {level}")
        self.level = float(level)

    def threshold(self, g: Grid1D, m) -> float:
        m = _check_weights(g, m)
        k = int(np.searchsorted(np.cumsum(m), self.level, side="left"))
        return float(g.points[min(k, g.n_points - 1)])

    def evaluate(self, g, m):
        m = _check_weights(g, m)
        psi = self.threshold(g, m)
        hinge = np.maximum(g.points - psi, 0.0)
        return float((hinge @ m) / (1.0 - self.level) + psi)

    def derivative(self, g, m):
        psi = self.threshold(g, m)
        return np.maximum(g.points - psi, 0.0) / (1.0 - self.level)


# ---------------------------------------------------------------------------
# pairwise interaction integrals


class InteractionCost(CostFunctional):
    """chi(m) = sum_{k,k'} phi(x_k, x_k') m(k) m(k') for a pairwise kernel.

    The kernel callable must broadcast over arrays; its grid sample (an
    n x n matrix) is materialized lazily and cached per grid.
    """

    def __init__(self, kernel):
        self.kernel = kernel
        self._samples = {}

    def _matrix(self, g: Grid1D) -> np.ndarray:
        mat = self._samples.get(g)
        if mat is None:
            x = g.points
            mat = np.asarray(self.kernel(x[:, None], x[None, :]), dtype=float)
            if mat.shape != (g.n_points, g.n_points):
                raise ContractError("interaction kernel did not broadcast to n x n")
            self._samples[g] = mat
        return mat

    def evaluate(self, g, m):
        m = _check_weights(g, m)
        mat = self._matrix(g)
        return float(m @ mat @ m)

    def derivative(self, g, m):
        m = _check_weights(g, m)
        mat = self._matrix(g)
        return mat @ m + mat.T @ m


def quadratic_interaction_cost(g: Grid1D) -> InteractionCost:
    """Kernel phi(x,y) = |y - x|^2 / 2, whose value equals Var(m)."""
    return InteractionCost(lambda x, y: 0.5 * (y - x) ** 2)


# ---------------------------------------------------------------------------
# support function of the reachable moment set


def support_function(g, dyn, tg, m0, lam, basis, kernel=None) -> float:
    """sup over controls of sum_i lam_i * (integral phi_i dm_T).

    Solved as one standard backward pass with terminal -sum lam_i phi_i; the
    negated initial value is the support function of the reachable moment
    set, so sampling directions lam yields an outer polyhedral approximation
    of that set.
    """
    lam = np.asarray(lam, dtype=float)
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape != (lam.size, g.n_points):
        raise ContractError(
            f"basis has shape {basis.shape}, expected ({lam.size}, {g.n_points})"
        )
    table, _ = backward_pass(g, dyn, tg, -(lam @ basis), kernel=kernel)
    return -value_at_initial(table, m0)


# ---------------------------------------------------------------------------
# registry used by the CLI


def _make_wasserstein2(g, params):
    atoms = params.get("atoms")
    if atoms is None:
        raise ConfigError("wasserstein2 requires target atoms")
    return Wasserstein1D(discretize_initial(g, atoms), q=2.0, mode="root")


def _make_mean_plus_beta_std(g, params):
    if "beta" not in params:
        raise ConfigError("mean_plus_beta_std requires parameter beta")
    return mean_plus_std_cost(g, float(params["beta"]))


def _make_cvar(g, params):
    if "beta" not in params:
        raise ConfigError("cvar requires parameter beta")
    return CVaRCost(float(params["beta"]))


COST_REGISTRY = {
    "linear": lambda g, p: linear_cost(g, p.get("coefficients", (0.0, 1.0))),
    "variance": lambda g, p: variance_cost(g),
    "mean_plus_beta_std": _make_mean_plus_beta_std,
    "wasserstein2": _make_wasserstein2,
    "cvar": _make_cvar,
    "interaction_quadratic": lambda g, p: quadratic_interaction_cost(g),
}


def make_cost(name: str, g: Grid1D, params=None) -> CostFunctional:
    """Build a registered functional by name (see ``COST_REGISTRY``)."""
    try:
        factory = COST_REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown cost functional {name!r}; available: {sorted(COST_REGISTRY)}"
        ) from None
    return factory(g, params or {})
