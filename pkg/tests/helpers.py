import numpy as np

from opmix.grid import make_grid
from opmix.mixed_model import MixedModelData
from opmix.simulate import SimulationSpec, simulate


def brownian_data(n, m=2, lam=0.7, seed=5, q=1, p=2):
    """Smooth-signal data with intercept + slope fixed effects and one random column."""
    grid = make_grid(0, 1, n)
    t = grid.points
    rng = np.random.default_rng(seed)
    base = np.column_stack([np.ones(n), t])[:, :p]
    gam = np.vstack([base] * m)
    z = np.vstack([np.full((n, 1), j + 1.0) for j in range(m)])[:, :q]
    x = np.sin(2 * np.pi * t)[:, None] * np.ones(m) / lam
    y = (gam @ np.array([1.0, 2.0])[:p]).reshape(m, n).T + x + rng.normal(size=(n, m)) * 0.3
    if q:
        y = y + 0.5 * z.reshape(m, n).T
    return MixedModelData(grid, y, gam, z if q else None)


def simulated(n, m, seed, lam=1.0, sigma2=1.0, **kw):
    return simulate(make_grid(0, 1, n), SimulationSpec(m=m, lam=lam, sigma2=sigma2, **kw), seed)
