import numpy as np
import pytest
from scipy.optimize import linprog

from mfcontrol import (
    ControlGrid,
    CVaRCost,
    ConfigError,
    Dynamics1D,
    EvaluationError,
    Grid1D,
    InteractionCost,
    MomentComposition,
    TimeGrid,
    Wasserstein1D,
    central_moment_cost,
    discretize_initial,
    linear_cost,
    make_cost,
    mean_plus_std_cost,
    quadratic_interaction_cost,
    support_function,
    transport_cost,
    variance_cost,
    wasserstein_distance,
)
from mfcontrol.costs import COST_REGISTRY

from conftest import random_distribution, unit_vol


def lp_transport_cost(xs, ws, ys, wt, q):
    """Transport LP solved directly over all coupling variables."""
    n, m = len(xs), len(ys)
    cost = (np.abs(xs[:, None] - ys[None, :]) ** q).ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([ws, wt])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def grid_with_target():
    g = Grid1D(-5.0, 5.0, 1001)
    third = 1.0 / 3.0
    target = discretize_initial(g, [(-2.0, third), (0.0, third), (2.0, 1 - 2 * third)])
    return g, target


# ---------------------------------------------------------------------------
# moment compositions


def test_mean_functional_on_symmetric_atoms():
    g, target = grid_with_target()
    assert linear_cost(g).evaluate(g, target) == pytest.approx(0.0, abs=1e-12)


def test_variance_of_three_atoms_is_8_3():
    g, target = grid_with_target()
    assert variance_cost(g).evaluate(g, target) == pytest.approx(8.0 / 3.0, rel=1e-12)
    # cross-check against the pairwise-interaction identity
    assert quadratic_interaction_cost(g).evaluate(g, target) == pytest.approx(
        8.0 / 3.0, rel=1e-12
    )


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_unguarded_sqrt_composition_raises_on_unit_mass():
    g = Grid1D(-5.0, 5.0, 101)
    x = g.points
    raw = MomentComposition(
        [x, x * x],
        lambda y: y[0] - 2.0 * np.sqrt(y[1] - y[0] ** 2),
        lambda y: np.array(
            [1.0 + 2.0 * y[0] / np.sqrt(y[1] - y[0] ** 2),
             -1.0 / np.sqrt(y[1] - y[0] ** 2)]
        ),
    )
    m = discretize_initial(g, 1.0)
    with pytest.raises(EvaluationError):
        raw.derivative(g, m)


def test_guarded_mean_plus_std_total_at_zero_variance():
    g = Grid1D(-5.0, 5.0, 101)
    cost = mean_plus_std_cost(g, -2.0)
    m = discretize_initial(g, 1.0)
    assert cost.evaluate(g, m) == pytest.approx(1.0)
    np.testing.assert_allclose(cost.derivative(g, m), g.points, rtol=0, atol=1e-12)


def test_central_moment_binomial_matches_direct():
    g = Grid1D(-3.0, 3.0, 301)
    rng = np.random.default_rng(10)
    for r in (2, 3, 4):
        cost = central_moment_cost(g, r)
        for _ in range(10):
            m = random_distribution(rng, g.n_points)
            mean = g.points @ m
            direct = ((g.points - mean) ** r) @ m
            assert cost.evaluate(g, m) == pytest.approx(direct, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize(
    "factory",
    [variance_cost, lambda g: mean_plus_std_cost(g, -2.0), quadratic_interaction_cost,
     lambda g: central_moment_cost(g, 3)],
)
def test_derivative_matches_finite_differences(factory):
    g = Grid1D(-3.0, 3.0, 61)
    cost = factory(g)
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(50):
        m1 = random_distribution(rng, g.n_points)
        m2 = random_distribution(rng, g.n_points, sparse=True)
        direction = m2 - m1
        f = lambda t: cost.evaluate(g, m1 + t * direction)
        fd = (f(h) - f(-h)) / (2 * h)
        analytic = float(cost.derivative(g, m1) @ direction)
        assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_outer_gradient_shape_checked():
    g = Grid1D(0.0, 1.0, 11)
    bad = MomentComposition([g.points], lambda y: y[0], lambda y: np.ones(2))
    from mfcontrol.exceptions import ContractError
    with pytest.raises(ContractError):
        bad.derivative(g, np.full(11, 1 / 11))


# ---------------------------------------------------------------------------
# optimal transport


def test_wasserstein_point_mass_examples():
    x = np.array([0.0, 1.0])
    assert wasserstein_distance(x, [1, 0], x, [0, 1], q=1) == pytest.approx(1.0)
    g, target = grid_with_target()
    w2 = Wasserstein1D(target, q=2.0, mode="root")
    m0 = discretize_initial(g, 0.0)
    assert w2.evaluate(g, m0) == pytest.approx(np.sqrt(8.0 / 3.0), rel=1e-12)
    assert w2.evaluate(g, target) == 0.0


def test_transport_cost_matches_lp_oracle():
    rng = np.random.default_rng(12)
    for trial in range(60):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        xs = np.sort(rng.uniform(-3, 3, size=n))
        ys = np.sort(rng.uniform(-3, 3, size=m))
        ws = rng.random(n) + 0.05
        ws /= ws.sum()
        wt = rng.random(m) + 0.05
        wt /= wt.sum()
        q = float(rng.choice([1.0, 2.0, 3.0]))
        ours = transport_cost(xs, ws, ys, wt, q)
        oracle = lp_transport_cost(xs, ws, ys, wt, q)
        assert ours == pytest.approx(oracle, rel=1e-9, abs=1e-11)


def test_wasserstein_orders_are_monotone():
    g = Grid1D(-2.0, 2.0, 81)
    rng = np.random.default_rng(13)
    for _ in range(30):
        m1 = random_distribution(rng, g.n_points)
        m2 = random_distribution(rng, g.n_points, sparse=True)
        d1 = wasserstein_distance(g.points, m1, g.points, m2, q=1)
        d2 = wasserstein_distance(g.points, m1, g.points, m2, q=2)
        assert d1 <= d2 + 1e-12


def test_potential_single_target_atom():
    g = Grid1D(-5.0, 5.0, 201)
    c = 1.5
    target = discretize_initial(g, c)
    w = Wasserstein1D(target, q=2.0, mode="power")
    rng = np.random.default_rng(14)
    m = random_distribution(rng, g.n_points)
    np.testing.assert_allclose(
        w.derivative(g, m), np.abs(g.points - c) ** 2, rtol=0, atol=1e-12
    )


def test_potential_achieves_strong_duality():
    g = Grid1D(-2.0, 2.0, 41)
    rng = np.random.default_rng(15)
    for _ in range(40):
        target = random_distribution(rng, g.n_points, sparse=True)
        w = Wasserstein1D(target, q=float(rng.choice([1.0, 2.0])), mode="power")
        m = random_distribution(rng, g.n_points, sparse=rng.random() < 0.5)
        phi, psi, ys, wt = w.potential(g, m)
        primal = w.evaluate(g, m)
        dual = float(phi @ m + psi @ wt)
        assert dual == pytest.approx(primal, rel=1e-9, abs=1e-11)
        # feasibility: phi(x) + psi(y) <= |x-y|^q everywhere
        gap = np.abs(g.points[:, None] - ys[None, :]) ** w.q - phi[:, None] - psi[None, :]
        assert gap.min() >= -1e-11


def test_subgradient_inequality_power_mode():
    g, target = grid_with_target()
    w = Wasserstein1D(target, q=2.0, mode="power")
    m1 = discretize_initial(g, 0.0)
    base = w.evaluate(g, m1)
    grad = w.derivative(g, m1)
    rng = np.random.default_rng(16)
    for _ in range(100):
        m2 = random_distribution(rng, g.n_points, sparse=True)
        lhs = w.evaluate(g, m2)
        rhs = base + float(grad @ (m2 - m1))
        assert lhs >= rhs - 1e-9


def test_root_mode_zero_at_target_and_chain_rule():
    g, target = grid_with_target()
    root = Wasserstein1D(target, q=2.0, mode="root")
    power = Wasserstein1D(target, q=2.0, mode="power")
    np.testing.assert_array_equal(root.derivative(g, target), np.zeros(g.n_points))
    rng = np.random.default_rng(17)
    m = random_distribution(rng, g.n_points)
    dist = root.evaluate(g, m)
    np.testing.assert_allclose(
        root.derivative(g, m), power.derivative(g, m) / (2.0 * dist), rtol=1e-12
    )


def test_wasserstein_mode_validation():
    g, target = grid_with_target()
    with pytest.raises(ConfigError):
        Wasserstein1D(target, q=0.5)
    with pytest.raises(ConfigError):
        Wasserstein1D(target, mode="cubic")


# ---------------------------------------------------------------------------
# conditional value at risk


def cvar_dual_oracle(g, m, beta):
    """Dual objective minimized exactly over its kink set (the grid atoms)."""
    best = np.inf
    for psi in g.points:
        val = float(np.maximum(g.points - psi, 0.0) @ m) + (1 - beta) * psi
        best = min(best, val)
    return best / (1 - beta)


def test_cvar_examples():
    g = Grid1D(0.0, 1.0, 2)
    m = np.array([0.5, 0.5])
    c95 = CVaRCost(0.95)
    assert c95.threshold(g, m) == 1.0
    assert c95.evaluate(g, m) == pytest.approx(1.0, abs=1e-12)
    c50 = CVaRCost(0.5)
    assert c50.threshold(g, m) == 0.0
    assert c50.evaluate(g, m) == pytest.approx(1.0, abs=1e-12)

    g5 = Grid1D(-5.0, 5.0, 101)
    point = discretize_initial(g5, 1.3)
    for beta in (0.1, 0.5, 0.95):
        assert CVaRCost(beta).evaluate(g5, point) == pytest.approx(1.3, abs=1e-12)


def test_cvar_level_validation():
    for bad in (0.0, 1.0, -0.3, 2.0):
        with pytest.raises(ConfigError):
            CVaRCost(bad)


def test_cvar_matches_dual_grid_oracle():
    g = Grid1D(-2.0, 2.0, 81)
    rng = np.random.default_rng(18)
    for _ in range(50):
        m = random_distribution(rng, g.n_points, sparse=rng.random() < 0.5)
        beta = float(rng.uniform(0.05, 0.95))
        cost = CVaRCost(beta)
        assert cost.evaluate(g, m) == pytest.approx(
            cvar_dual_oracle(g, m, beta), abs=1e-9
        )


def test_cvar_supergradient_inequality():
    g = Grid1D(-2.0, 2.0, 81)
    cost = CVaRCost(0.9)
    rng = np.random.default_rng(19)
    m1 = random_distribution(rng, g.n_points)
    base = cost.evaluate(g, m1)
    grad = cost.derivative(g, m1)
    for _ in range(100):
        m2 = random_distribution(rng, g.n_points, sparse=True)
        assert cost.evaluate(g, m2) <= base + float(grad @ (m2 - m1)) + 1e-9


def test_cvar_lipschitz_in_d1():
    g = Grid1D(-2.0, 2.0, 81)
    beta = 0.8
    cost = CVaRCost(beta)
    rng = np.random.default_rng(20)
    for _ in range(50):
        m1 = random_distribution(rng, g.n_points)
        m2 = random_distribution(rng, g.n_points, sparse=rng.random() < 0.5)
        d1 = wasserstein_distance(g.points, m1, g.points, m2, q=1)
        diff = abs(cost.evaluate(g, m2) - cost.evaluate(g, m1))
        assert diff <= d1 / (1 - beta) + 1e-9


# ---------------------------------------------------------------------------
# interaction integrals


def test_interaction_zero_kernel():
    g = Grid1D(-1.0, 1.0, 21)
    cost = InteractionCost(lambda x, y: 0.0 * x * y)
    m = np.full(21, 1 / 21)
    assert cost.evaluate(g, m) == 0.0
    np.testing.assert_array_equal(cost.derivative(g, m), np.zeros(21))


def test_interaction_second_order_expansion_exact():
    g = Grid1D(-1.0, 1.0, 31)
    cost = InteractionCost(lambda x, y: np.sin(x) * np.cos(y) + 0.5 * (y - x) ** 2)
    rng = np.random.default_rng(21)
    x = g.points
    mat = np.sin(x)[:, None] * np.cos(x)[None, :] + 0.5 * (x[None, :] - x[:, None]) ** 2
    for _ in range(20):
        m1 = random_distribution(rng, g.n_points)
        m2 = random_distribution(rng, g.n_points, sparse=True)
        theta = float(rng.random())
        d = m2 - m1
        lhs = cost.evaluate(g, (1 - theta) * m1 + theta * m2)
        rhs = (
            cost.evaluate(g, m1)
            + theta * float(cost.derivative(g, m1) @ d)
            + theta**2 * float(d @ mat @ d)
        )
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-13)


# ---------------------------------------------------------------------------
# support function of the reachable moment set


def drift_problem(half_width=8.0, n_points=321, n_steps=50):
    # wide enough that no relevant mass is clipped at the hull boundary
    g = Grid1D(-half_width, half_width, n_points)
    cg = ControlGrid.from_spacing(-1.0, 1.0, 0.25)
    dyn = Dynamics1D(lambda x, u: u, unit_vol, cg)
    tg = TimeGrid(1.0, n_steps)
    m0 = discretize_initial(g, 0.0)
    return g, dyn, tg, m0


def test_support_function_zero_direction():
    g, dyn, tg, m0 = drift_problem()
    basis = [g.points]
    assert support_function(g, dyn, tg, m0, [0.0], basis) == pytest.approx(0.0, abs=1e-12)


def test_support_function_mean_reaches_horizon():
    g, dyn, tg, m0 = drift_problem()
    basis = [g.points]
    val = support_function(g, dyn, tg, m0, [1.0], basis)
    assert val == pytest.approx(1.0, abs=1e-9)


def test_support_function_convexity_consequence():
    g, dyn, tg, m0 = drift_problem(half_width=5.0, n_points=101, n_steps=20)
    basis = [g.points, g.points**2]
    rng = np.random.default_rng(22)
    for _ in range(5):
        lam = rng.normal(size=2)
        plus = support_function(g, dyn, tg, m0, lam, basis)
        minus = support_function(g, dyn, tg, m0, -lam, basis)
        assert plus + minus >= -1e-9


# ---------------------------------------------------------------------------
# registry


def test_registry_names():
    assert set(COST_REGISTRY) == {
        "linear",
        "variance",
        "mean_plus_beta_std",
        "wasserstein2",
        "cvar",
        "interaction_quadratic",
    }


def test_make_cost_dispatch_and_errors():
    g = Grid1D(-5.0, 5.0, 101)
    third = 1.0 / 3.0
    w = make_cost("wasserstein2", g, {"atoms": [(-2, third), (0, third), (2, 1 - 2 * third)]})
    assert isinstance(w, Wasserstein1D) and w.mode == "root"
    assert isinstance(make_cost("cvar", g, {"beta": 0.95}), CVaRCost)
    assert isinstance(make_cost("mean_plus_beta_std", g, {"beta": -2}), MomentComposition)
    with pytest.raises(ConfigError):
        make_cost("nope", g)
    with pytest.raises(ConfigError):
        make_cost("cvar", g, {})
    with pytest.raises(ConfigError):
        make_cost("wasserstein2", g, {})
