import math

import numpy as np
import pytest

from mfcontrol import ControlGrid, Dynamics1D, Grid1D, TimeGrid


def unit_vol(x, u):
    return np.ones(np.broadcast(x, u).shape)


def hat_weight_row(g, dyn, tg, k, u):
    """Independent re-derivation of one transition row.

    Uses the closed-form hat function max(0, 1 - |z - x_k|/dx) over *every*
    grid node instead of interval arithmetic.
    """
    dt = tg.dt
    x = g.point(k)
    b = float(np.asarray(dyn.drift(x, u)))
    s = float(np.asarray(dyn.volatility(x, u)))
    row = np.zeros(g.n_points)
    for z in (x + b * dt + s * math.sqrt(dt), x + b * dt - s * math.sqrt(dt)):
        z = min(max(z, g.x_min), g.x_max)
        for kk in range(g.n_points):
            row[kk] += 0.5 * max(0.0, 1.0 - abs(z - g.point(kk)) / g.spacing)
    return row


@pytest.fixture
def small_grid():
    return Grid1D(-2.0, 2.0, 41)  # dx = 0.1


@pytest.fixture
def drift_dynamics():
    """dX = u dt + dW on a coarse control grid."""
    cg = ControlGrid.from_spacing(-1.0, 1.0, 0.25)
    return Dynamics1D(drift=lambda x, u: u, volatility=unit_vol, control_set=cg)


@pytest.fixture
def small_time():
    return TimeGrid(1.0, 10)


def random_distribution(rng, n, sparse=False):
    """Random element of the simplex; optionally with a sparse support."""
    if sparse:
        m = np.zeros(n)
        support = rng.choice(n, size=rng.integers(1, min(8, n) + 1), replace=False)
        m[support] = rng.random(support.size) + 1e-3
    else:
        m = rng.random(n) + 1e-12
    return m / m.sum()
