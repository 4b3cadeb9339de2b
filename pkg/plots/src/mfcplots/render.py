"""Render one figure kind from a run's CSV output.

Supported kinds and their input schemas:

* ``distribution``  -- final_distribution.csv       (k, x, weight)
* ``regularized``   -- regularized_distribution.csv (k, y, weight)
* ``value``         -- value_function.csv           (j, k, x, V), heatmap
* ``control``       -- control.csv                  (j, k, x, u), heatmap
* ``convergence``   -- convergence.csv              (iteration, cost, gap,
                        theta_or_alpha, q, wall_time_s), cost linear / gap log

Inputs are opened read-only; the output file is written only after the input
validates, so a failed render leaves nothing behind.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class SchemaError(ValueError):
    """The input CSV does not match the expected run-output schema."""


_SCHEMAS = {
    "distribution": ["k", "x", "weight"],
    "regularized": ["k", "y", "weight"],
    "value": ["j", "k", "x", "V"],
    "control": ["j", "k", "x", "u"],
    "convergence": ["iteration", "cost", "gap", "theta_or_alpha", "q", "wall_time_s"],
}

FIGURE_KINDS = tuple(_SCHEMAS)


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    input_path: str
    output_path: str


def read_table(path, expected_columns):
    """Read a CSV into float column arrays, validating the header first."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected columns {expected_columns}")
        for got, want in zip(header, expected_columns):
            if got != want:
                raise SchemaError(f"{path}: expected column {want!r}, found {got!r}")
        if len(header) != len(expected_columns):
            raise SchemaError(
                f"{path}: expected {len(expected_columns)} columns "
                f"{expected_columns}, found {len(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} fields")
            rows.append([float(v) if v != "" else np.nan for v in row])
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return {name: data[:, i] for i, name in enumerate(expected_columns)}


def _long_to_matrix(cols):
    """Pivot (j, k, value) long format into a (time, state) matrix."""
    j = cols["j"].astype(int)
    k = cols["k"].astype(int)
    n_j, n_k = j.max() + 1, k.max() + 1
    field = "V" if "V" in cols else "u"
    mat = np.full((n_j, n_k), np.nan)
    mat[j, k] = cols[field]
    if np.isnan(mat).any():
        raise SchemaError(f"incomplete (j, k) table for column {field!r}")
    x = np.full(n_k, np.nan)
    x[k] = cols["x"]
    return mat, x


def _plot_distribution(cols, ax, x_name):
    ax.fill_between(cols[x_name], cols["weight"], step="mid", alpha=0.35)
    ax.plot(cols[x_name], cols["weight"], drawstyle="steps-mid", lw=1.0)
    ax.set_xlabel("state")
    ax.set_ylabel("probability")


def _plot_heatmap(cols, ax, fig, label):
    mat, x = _long_to_matrix(cols)
    im = ax.imshow(
        mat,
        origin="lower",
        aspect="auto",
        extent=(x[0], x[-1], 0, mat.shape[0] - 1),
        cmap="viridis",
    )
    ax.set_xlabel("state")
    ax.set_ylabel("time step")
    fig.colorbar(im, ax=ax, label=label)


def _plot_convergence(cols, axes):
    it = cols["iteration"]
    axes[0].plot(it, cols["cost"], marker="o", ms=3)
    axes[0].set_ylabel("cost")
    gap = np.maximum(cols["gap"], 1e-16)  # log scale needs positive values
    axes[1].semilogy(it, gap, marker="o", ms=3, color="tab:red")
    axes[1].set_ylabel("optimality gap")
    axes[1].set_xlabel("iteration")


def render(spec: FigureSpec) -> Path:
    """Validate the input CSV and write one PNG; returns the output path."""
    if spec.kind not in _SCHEMAS:
        raise SchemaError(f"unknown figure kind {spec.kind!r}; choose from {FIGURE_KINDS}")
    cols = read_table(spec.input_path, _SCHEMAS[spec.kind])

    if spec.kind == "convergence":
        fig, axes = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
    else:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        if spec.kind == "distribution":
            _plot_distribution(cols, ax, "x")
            ax.set_title("terminal distribution")
        elif spec.kind == "regularized":
            _plot_distribution(cols, ax, "y")
            ax.set_title("regularized terminal distribution")
        elif spec.kind == "value":
            _plot_heatmap(cols, ax, fig, "value")
            ax.set_title("value function")
        elif spec.kind == "control":
            _plot_heatmap(cols, ax, fig, "control")
            ax.set_title("feedback control")
        else:
            _plot_convergence(cols, axes)
            axes[0].set_title("convergence")
        fig.tight_layout()
        out = Path(spec.output_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=130)
    finally:
        plt.close(fig)
    return out


DEFAULT_INPUTS = {
    "distribution": "final_distribution.csv",
    "regularized": "regularized_distribution.csv",
    "value": "value_function.csv",
    "control": "control.csv",
    "convergence": "convergence.csv",
}


def render_all(run_dir, output_dir) -> list:
    """Render every figure kind from a run directory; returns written paths."""
    run_dir = Path(run_dir)
    output_dir = Path(output_dir)
    written = []
    for kind, name in DEFAULT_INPUTS.items():
        spec = FigureSpec(
            kind=kind,
            input_path=str(run_dir / name),
            output_path=str(output_dir / f"{kind}.png"),
        )
        written.append(render(spec))
    return written
