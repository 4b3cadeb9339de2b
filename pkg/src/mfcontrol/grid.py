"""Uniform 1-D state grid with projection and barycentric (hat-function) weights.

The grid carries the discrete state space S = {x_0, ..., x_{n-1}} whose convex
hull is the interval [x_min, x_max].  Any point of the hull is written as a
convex combination of the two grid nodes that bracket it; those weights are
what the transition kernel and the initial-law discretizer redistribute mass
with.  Instances are immutable and safe to share across threads.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

from .exceptions import DomainError


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n_points`` >= 2 nodes on [x_min, x_max]."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2:
            raise DomainError(f"n_points must be >= 2, got {self.n_points}")
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise DomainError("grid bounds must be finite")
        if self.x_max <= self.x_min:
            raise DomainError(
                f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]"
            )

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        """All nodes x_k = x_min + k * spacing, shape (n_points,). Read-only."""
        pts = self.x_min + self.spacing * np.arange(self.n_points)
        pts[-1] = self.x_max
        pts.setflags(write=False)
        return pts

    def point(self, k: int) -> float:
        return float(self.points[k])

    @classmethod
    def from_spacing(cls, x_min, x_max, dx) -> "Grid1D":
        """Grid with the given spacing; (x_max - x_min) must be a multiple of dx."""
        if dx <= 0:
            raise DomainError(f"spacing must be positive, got {dx}")
        ratio = (x_max - x_min) / dx
        n_cells = round(ratio)
        if n_cells < 1 or abs(ratio - n_cells) > 1e-9 * max(1.0, abs(ratio)):
            raise DomainError(
                f"(x_max - x_min) = {x_max - x_min} is not a multiple of dx = {dx}"
            )
        return cls(float(x_min), float(x_max), n_cells + 1)


@dataclass(frozen=True)
class BarycentricPair:
    """Convex weights of a point over one grid interval [x_i, x_{i+1}].

    ``left_weight`` belongs to node ``left_index``; the right node carries
    ``1 - left_weight``, so the two weights sum to one exactly.
    """

    left_index: int
    left_weight: float


def project(g: Grid1D, x: float) -> float:
    """Orthogonal projection of ``x`` onto the grid hull [x_min, x_max]."""
    if not math.isfinite(x):
        raise DomainError(f"cannot project non-finite value {x!r}")
    return min(max(x, g.x_min), g.x_max)


def barycentric(g: Grid1D, x: float) -> BarycentricPair:
    """Hat-function weights of ``x``, which must already lie in the hull.

    Points that coincide bitwise with a node get weight 1 there; anything else
    splits between the two bracketing nodes.  Projection is the caller's job,
    which keeps this operation total on its stated domain.
    """
    if not math.isfinite(x):
        raise DomainError(f"non-finite query point {x!r}")
    if x < g.x_min or x > g.x_max:
        raise DomainError(
            f"{x!r} lies outside the grid hull [{g.x_min}, {g.x_max}]; project first"
        )
    i, w = _interval_weights(g, np.asarray([x], dtype=float))
    return BarycentricPair(int(i[0]), float(w[0]))


def _interval_weights(g: Grid1D, x: np.ndarray):
    """Vectorized core of ``barycentric``: arrays (left_index, left_weight).

    Assumes every entry of ``x`` is inside the hull.  The interval index is
    floor((x - x_min)/dx) clamped to [0, n-2] so x = x_max stays in range; the
    fraction is clamped to [0, 1] to absorb rounding of the floor.
    """
    dx = g.spacing
    idx = np.floor((x - g.x_min) / dx).astype(np.int64)
    np.clip(idx, 0, g.n_points - 2, out=idx)
    left = g.x_min + idx * dx
    t = (x - left) / dx
    np.clip(t, 0.0, 1.0, out=t)
    # exact node hits take weight 1 on that node (no split)
    t[x == left] = 0.0
    t[x == left + dx] = 1.0
    t[x == g.x_max] = 1.0
    return idx, 1.0 - t
