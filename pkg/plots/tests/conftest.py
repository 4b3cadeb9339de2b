import csv
import subprocess
import sys

import numpy as np
import pytest


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


@pytest.fixture
def synthetic_run(tmp_path):
    """A small schema-conformant run directory with a two-bump distribution."""
    x = np.round(np.linspace(-2.0, 2.0, 41), 10)
    w = np.exp(-((x - 1.0) ** 2) * 8) + 0.6 * np.exp(-((x + 1.0) ** 2) * 8)
    w /= w.sum()
    write_csv(
        tmp_path / "final_distribution.csv",
        ["k", "x", "weight"],
        [(k, x[k], w[k]) for k in range(41)],
    )
    y = np.round(np.linspace(-2.0, 2.0, 11), 10)
    wy = np.exp(-((y - 1.0) ** 2) * 4) + 0.6 * np.exp(-((y + 1.0) ** 2) * 4)
    wy /= wy.sum()
    write_csv(
        tmp_path / "regularized_distribution.csv",
        ["k", "y", "weight"],
        [(k, y[k], wy[k]) for k in range(11)],
    )
    rows_v, rows_u = [], []
    for j in range(6):
        for k in range(41):
            rows_v.append((j, k, x[k], np.cos(x[k]) * (j + 1)))
            if j < 5:
                rows_u.append((j, k, x[k], np.sign(np.sin(x[k] + j))))
    write_csv(tmp_path / "value_function.csv", ["j", "k", "x", "V"], rows_v)
    write_csv(tmp_path / "control.csv", ["j", "k", "x", "u"], rows_u)
    write_csv(
        tmp_path / "convergence.csv",
        ["iteration", "cost", "gap", "theta_or_alpha", "q", "wall_time_s"],
        [(l, 1.0 / (l + 1), 10.0 ** (-l), 1.0, l, 0.1 * l) for l in range(8)],
    )
    return tmp_path


def run_solver_case(case, algorithm, out_dir):
    """Drive the solver through its public CLI (the only interface used)."""
    cmd = [
        sys.executable, "-m", "mfcontrol.cli",
        "run", "--case", str(case), "--algorithm", str(algorithm),
        "--output", str(out_dir),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out_dir


@pytest.fixture(scope="session")
def case_outputs(tmp_path_factory):
    """Real case-1 and case-2 run directories produced by the solver CLI."""
    root = tmp_path_factory.mktemp("runs")
    dirs = {
        1: run_solver_case(1, 2, root / "case1"),
        2: run_solver_case(2, 1, root / "case2"),
    }
    return dirs
