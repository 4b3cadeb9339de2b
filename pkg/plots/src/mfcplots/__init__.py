"""Figure rendering for solver run outputs.

The boundary with the solver is the CSV schema only: these scripts read the
five files a run writes (convergence table, final and regularized
distributions, value-function and control tables in long format) and emit
PNG images.  No solver state is shared.
"""

from .render import FIGURE_KINDS, FigureSpec, SchemaError, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "SchemaError", "render"]
