"""Command-line driver: configure a run, execute it, dump CSV results.

A run writes five files into the output directory:

* ``convergence.csv``   -- iteration, cost, gap, theta_or_alpha, q, wall_time_s
* ``final_distribution.csv``       -- k, x, weight
* ``regularized_distribution.csv`` -- k, y, weight (coarse display grid)
* ``value_function.csv``           -- j, k, x, V (long format)
* ``control.csv``                  -- j, k, x, u (long format)

All files are comma-delimited with a header row, LF line endings, '.' decimal
separator, and floats printed with 17 significant digits so reading them back
reproduces the in-memory doubles exactly.  Exit codes: 0 success, 2
configuration error, 3 numeric failure during the solve.
"""

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .costs import make_cost
from .exceptions import ConfigError, DomainError, EvaluationError, NumericError, SetupError
from .grid import Grid1D
from .hjb import FeedbackPolicy
from .markov import ControlGrid, Dynamics1D, TimeGrid, make_distribution
from .solver import Problem, SolverConfig, solve

DYNAMICS = {
    # drift u, unit noise
    "drift_control": (lambda x, u: u, lambda x, u: np.ones(np.broadcast(x, u).shape)),
    # drift u, noise 1 - u: negative controls pay for their effect with risk
    "risk_control": (lambda x, u: u, lambda x, u: 1.0 - u),
}


@dataclass
class ProblemConfig:
    """Declarative description of one run (file- or built-in-backed)."""

    dynamics_name: str
    horizon: float
    dt: float
    x_min: float
    x_max: float
    dx: float
    u_min: float
    u_max: float
    du: float
    initial_kind: str  # "point" | "atoms" | "samples"
    initial_data: object
    cost_name: str
    cost_params: dict
    solver: SolverConfig
    output_dir: str
    regularization_dy: float = 0.2
    initial_control: float = 0.0

    def validate(self):
        if self.dynamics_name not in DYNAMICS:
            raise ConfigError(
                f"unknown dynamics {self.dynamics_name!r}; available: {sorted(DYNAMICS)}"
            )
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigError("horizon and dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"dt = {self.dt} does not divide horizon = {self.horizon}")
        if self.dx <= 0 or self.du <= 0:
            raise ConfigError("grid spacings must be positive")
        if self.regularization_dy <= 0:
            raise ConfigError("regularization_dy must be positive")

    def build(self) -> Problem:
        self.validate()
        g = Grid1D.from_spacing(self.x_min, self.x_max, self.dx)
        cg = ControlGrid.from_spacing(self.u_min, self.u_max, self.du)
        drift, vol = DYNAMICS[self.dynamics_name]
        dyn = Dynamics1D(drift=drift, volatility=vol, control_set=cg)
        tg = TimeGrid(self.horizon, round(self.horizon / self.dt))
        cost = make_cost(self.cost_name, g, self.cost_params)
        if self.initial_kind == "point":
            law = float(self.initial_data)
        elif self.initial_kind == "atoms":
            law = [(float(v), float(p)) for v, p in self.initial_data]
        elif self.initial_kind == "samples":
            law = [float(v) for v in self.initial_data]
        else:
            raise ConfigError(f"unknown initial law kind {self.initial_kind!r}")
        u0 = float(self.initial_control)
        cg.index_of(np.asarray([u0]))  # membership check
        policy = FeedbackPolicy.constant(u0, tg, g)
        return Problem(
            grid=g,
            dynamics=dyn,
            time_grid=tg,
            initial_law=law,
            cost=cost,
            initial_policy=policy,
        )


# ---------------------------------------------------------------------------
# built-in reference cases


def _case_config(case: int, algorithm: int) -> ProblemConfig:
    if case not in (1, 2, 3, 4):
        raise ConfigError(f"case must be 1..4, got {case}")
    if algorithm not in (1, 2):
        raise ConfigError(f"algorithm must be 1 or 2, got {algorithm}")
    third = 1.0 / 3.0
    cost_name, cost_params, dynamics = {
        1: ("wasserstein2", {"atoms": [(-2.0, third), (0.0, third), (2.0, 1.0 - 2 * third)]}, "drift_control"),
        2: ("mean_plus_beta_std", {"beta": -2.0}, "drift_control"),
        3: ("mean_plus_beta_std", {"beta": 2.0}, "drift_control"),
        4: ("cvar", {"beta": 0.95}, "risk_control"),
    }[case]
    iterations = {
        1: {1: 65, 2: 65},
        2: {1: 10, 2: 14},
        3: {1: 10, 2: 10},
        4: {1: 15, 2: 15},
    }[case][algorithm]
    # The penalized method needs a starting weight small enough that the
    # first proximal step moves off the anchor on the discrete control grid;
    # case 1's potential-scale terminal makes the default 1.0 too stiff.
    solver = SolverConfig(
        algorithm="gradient" if algorithm == 1 else "penalized",
        max_iterations=iterations,
        epsilon_tol=0.0,
        penalty_alpha0=0.25 if case == 1 else 1.0,
    )
    return ProblemConfig(
        dynamics_name=dynamics,
        horizon=1.0,
        dt=0.01,
        x_min=-5.0,
        x_max=5.0,
        dx=0.01,
        u_min=-1.0,
        u_max=1.0,
        du=0.05,
        initial_kind="point",
        initial_data=0.0,
        cost_name=cost_name,
        cost_params=cost_params,
        solver=solver,
        output_dir=f"case{case}_alg{algorithm}_out",
    )


CASE_SUMMARIES = [
    "case1: wasserstein2 target (-2,0,2)/3, dynamics drift_control, X0=0, 65 iterations",
    "case2: mean_plus_beta_std beta=-2 (convex), dynamics drift_control, X0=0, 10/14 iterations",
    "case3: mean_plus_beta_std beta=2 (concave), dynamics drift_control, X0=0, 10 iterations",
    "case4: cvar beta=0.95, dynamics risk_control, X0=0, 15 iterations",
]


def list_cases() -> str:
    """One line per built-in case: functional, dynamics, defaults."""
    header = (
        "built-in cases (T=1.0, dt=0.01, state grid [-5,5] dx=0.01, "
        "controls [-1,1] du=0.05, initial control 0):"
    )
    return "\n".join([header, *CASE_SUMMARIES])


# ---------------------------------------------------------------------------
# display regularization


def regularize(g: Grid1D, m: np.ndarray, dy: float):
    """Aggregate a fine-grid distribution onto a coarse display grid.

    Each coarse node y collects sum over fine nodes x with |y - x| <= dy of
    (dy - |y - x|)/dy * m(x).  The coarse spacing must be a positive multiple
    of the fine spacing so the hat functions form an exact partition of
    unity; mass is conserved (renormalized against rounding).

    Returns ``(coarse_grid, coarse_weights)``.
    """
    dx = g.spacing
    ratio = dy / dx
    if dy <= 0 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"dy = {dy} is not a positive multiple of dx = {dx}")
    coarse = Grid1D.from_spacing(g.x_min, g.x_max, dy)
    m = make_distribution(m)
    if m.shape != (g.n_points,):
        raise ConfigError("distribution does not match the fine grid")
    hats = np.maximum(0.0, 1.0 - np.abs(coarse.points[:, None] - g.points[None, :]) / dy)
    return coarse, make_distribution(hats @ m)


# ---------------------------------------------------------------------------
# config file parsing


def _parse_atoms(text: str):
    atoms = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            value, mass = part.split(":")
            atoms.append((float(value), float(mass)))
        except ValueError:
            raise ConfigError(
                f"bad atom {part!r}; expected value:mass pairs separated by commas"
            ) from None
    if not atoms:
        raise ConfigError("empty atom list")
    return atoms


def load_config(path) -> ProblemConfig:
    """Parse and validate a flat sectioned key=value config file."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e

    def need(section, key, cast=float):
        try:
            raw = parser.get(section, key)
        except configparser.Error:
            raise ConfigError(f"missing [{section}] {key} in {path}") from None
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None

    def opt(section, key, default, cast=float):
        if parser.has_section(section) and parser.has_option(section, key):
            return need(section, key, cast)
        return default

    initial_kind = opt("initial", "kind", "point", str)
    if initial_kind == "point":
        initial_data = need("initial", "value")
    elif initial_kind == "atoms":
        initial_data = _parse_atoms(need("initial", "atoms", str))
    elif initial_kind == "samples":
        initial_data = [float(v) for v in need("initial", "samples", str).split(",")]
    else:
        raise ConfigError(f"unknown [initial] kind {initial_kind!r}")

    cost_name = need("cost", "name", str)
    cost_params = {}
    for key, raw in parser.items("cost") if parser.has_section("cost") else []:
        if key == "name":
            continue
        cost_params[key] = _parse_atoms(raw) if key == "atoms" else float(raw)

    try:
        solver = SolverConfig(
            algorithm=opt("solver", "algorithm", "gradient", str),
            max_iterations=opt("solver", "max_iterations", 100, int),
            epsilon_tol=opt("solver", "epsilon_tol", 0.0),
            line_search=opt("solver", "line_search", "enumerate", str),
            line_search_points=opt("solver", "line_search_points", 65, int),
            line_search_max_iter=opt("solver", "line_search_max_iter", 60, int),
            penalty_alpha0=opt("solver", "penalty_alpha0", 1.0),
            penalty_h_minus=opt("solver", "penalty_h_minus", 0.5),
            penalty_h_plus=opt("solver", "penalty_h_plus", 2.0),
            penalty_max_inner=opt("solver", "penalty_max_inner", 60, int),
        )
    except ConfigError as e:
        raise ConfigError(f"[solver] {e}") from None

    cfg = ProblemConfig(
        dynamics_name=need("dynamics", "name", str),
        horizon=need("time", "horizon"),
        dt=need("time", "dt"),
        x_min=need("state_grid", "x_min"),
        x_max=need("state_grid", "x_max"),
        dx=need("state_grid", "dx"),
        u_min=need("control_grid", "u_min"),
        u_max=need("control_grid", "u_max"),
        du=need("control_grid", "du"),
        initial_kind=initial_kind,
        initial_data=initial_data,
        cost_name=cost_name,
        cost_params=cost_params,
        solver=solver,
        output_dir=opt("output", "directory", "out", str),
        regularization_dy=opt("output", "regularization_dy", 0.2),
        initial_control=opt("solver", "initial_control", 0.0),
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_outputs(cfg: ProblemConfig, problem: Problem, result) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    g, tg = problem.grid, problem.time_grid

    theta_or_alpha = [
        r.theta if r.theta is not None else r.alpha for r in result.records
    ]
    _write_csv(
        out / "convergence.csv",
        ["iteration", "cost", "gap", "theta_or_alpha", "q", "wall_time_s"],
        [
            (r.iteration, r.cost, r.gap, toa, r.passes, r.wall_time)
            for r, toa in zip(result.records, theta_or_alpha)
        ],
    )
    _write_csv(
        out / "final_distribution.csv",
        ["k", "x", "weight"],
        [(k, float(g.points[k]), float(w)) for k, w in enumerate(result.distribution)],
    )
    coarse, m_reg = regularize(g, result.distribution, cfg.regularization_dy)
    _write_csv(
        out / "regularized_distribution.csv",
        ["k", "y", "weight"],
        [(k, float(coarse.points[k]), float(w)) for k, w in enumerate(m_reg)],
    )
    values = result.value_table.values
    _write_csv(
        out / "value_function.csv",
        ["j", "k", "x", "V"],
        (
            (j, k, float(g.points[k]), float(values[j, k]))
            for j in range(tg.n_steps + 1)
            for k in range(g.n_points)
        ),
    )
    policy = result.feedback_policy or result.greedy_policy
    controls = policy.controls
    _write_csv(
        out / "control.csv",
        ["j", "k", "x", "u"],
        (
            (j, k, float(g.points[k]), float(controls[j, k]))
            for j in range(tg.n_steps)
            for k in range(g.n_points)
        ),
    )
    return out


def print_convergence(result, file=None):
    file = file if file is not None else sys.stdout
    print(f"{'iter':>5} {'cost':>14} {'gap':>12} {'theta/alpha':>12} {'q':>5} {'time_s':>8}", file=file)
    for r in result.records:
        toa = r.theta if r.theta is not None else r.alpha
        toa_s = f"{toa:.6g}" if toa is not None else "-"
        print(
            f"{r.iteration:>5} {r.cost:>14.6f} {r.gap:>12.3e} {toa_s:>12} "
            f"{r.passes:>5} {r.wall_time:>8.2f}",
            file=file,
        )
    print(f"status: {result.status}", file=file)
    if result.n_backward and result.n_forward:
        print(
            f"passes: {result.n_backward} backward "
            f"(avg {result.backward_seconds / result.n_backward:.3f}s), "
            f"{result.n_forward} forward "
            f"(avg {result.forward_seconds / result.n_forward:.3f}s)",
            file=file,
        )


# ---------------------------------------------------------------------------
# entry point


def run(cfg: ProblemConfig) -> int:
    problem = cfg.build()
    result = solve(problem, cfg.solver)
    out = write_outputs(cfg, problem, result)
    print_convergence(result)
    print(f"outputs written to {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="solve mean-field terminal-cost control problems on a 1-D grid",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run from a config file or built-in case")
    p_run.add_argument("config", nargs="?", help="path to a config file")
    p_run.add_argument("--case", type=int, choices=(1, 2, 3, 4), help="built-in case")
    p_run.add_argument("--algorithm", type=int, choices=(1, 2), default=1,
                       help="1 = gradient, 2 = penalized (with --case)")
    p_run.add_argument("--iterations", type=int, help="override max iterations")
    p_run.add_argument("--horizon", type=float, help="override the horizon T")
    p_run.add_argument("--output", help="override the output directory")

    sub.add_parser("list-cases", help="describe the built-in cases")

    args = parser.parse_args(argv)

    if args.command == "list-cases":
        print(list_cases())
        return 0

    try:
        if args.case is not None:
            cfg = _case_config(args.case, args.algorithm)
        elif args.config is not None:
            cfg = load_config(args.config)
        else:
            raise ConfigError("run requires a config path or --case")
        if args.iterations is not None:
            cfg.solver = replace(cfg.solver, max_iterations=args.iterations)
        if args.horizon is not None:
            cfg = replace(cfg, horizon=args.horizon)
        if args.output is not None:
            cfg = replace(cfg, output_dir=args.output)
        cfg.validate()
    except (ConfigError, DomainError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    try:
        return run(cfg)
    except (ConfigError, DomainError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (NumericError, EvaluationError, SetupError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
