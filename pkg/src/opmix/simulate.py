"""Draw synthetic data from y = Gamma beta + Z u + x + eps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .mixed_model import MixedModelData
from .operator import OperatorSpec
from .oracle import MAX_DENSE, build_R0

FIXED_TERMS = ("intercept", "time")
RANDOM_TERMS = ("sample_intercept", "sample_slope")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationSpec:
    m: int
    kernel: str = "motion"
    lam: float = 1.0
    sigma2: float = 1.0
    x_var: float | None = None  # defaults to sigma2
    fixed: tuple = ()
    beta: tuple = ()
    random: tuple = ()
    random_var: tuple = ()
    op: OperatorSpec | None = None


def fixed_design(grid: Grid, m: int, terms) -> tuple[np.ndarray, list[str]]:
    cols, names = [], []
    for term in terms:
        if term == "intercept":
            col = np.ones(grid.n)
        elif term == "time":
            col = grid.points.copy()
        else:
            raise SimulationError(f"unknown fixed term {term!r}; use one of {FIXED_TERMS}")
        cols.append(np.tile(col, m))
        names.append(f"fixed_{term}")
    mat = np.column_stack(cols) if cols else np.zeros((grid.n * m, 0))
    return mat, names


def random_design(grid: Grid, m: int, terms) -> tuple[np.ndarray, list[str]]:
    """One column per (term, sample); the column is zero outside its sample."""
    cols, names = [], []
    for term in terms:
        if term == "sample_intercept":
            base = np.ones(grid.n)
        elif term == "sample_slope":
            base = grid.points - (grid.a + grid.b) / 2
        else:
            raise SimulationError(f"unknown random term {term!r}; use one of {RANDOM_TERMS}")
        for j in range(m):
            col = np.zeros(grid.n * m)
            col[j * grid.n:(j + 1) * grid.n] = base
            cols.append(col)
            names.append(f"random_{term}_{j + 1}")
    mat = np.column_stack(cols) if cols else np.zeros((grid.n * m, 0))
    return mat, names


def simulate(grid: Grid, spec: SimulationSpec, seed: int) -> tuple[MixedModelData, dict]:
    """Sample one data set; returns the data and the truth (x, u, names)."""
    if grid.n > MAX_DENSE:
        raise SimulationError(f"N={grid.n} exceeds the sampling limit {MAX_DENSE}")
    if spec.sigma2 < 0:
        raise SimulationError("sigma2 must be non-negative")
    rng = np.random.default_rng(seed)
    x_var = spec.sigma2 if spec.x_var is None else spec.x_var
    dense = build_R0(spec.kernel, grid, spec.lam, spec.op)
    chol = np.linalg.cholesky(dense.R0)
    x = np.sqrt(x_var) * (chol @ rng.standard_normal((grid.n, spec.m)))

    gam, fixed_names = fixed_design(grid, spec.m, spec.fixed)
    z, random_names = random_design(grid, spec.m, spec.random)
    beta = np.asarray(spec.beta, dtype=float)
    if beta.shape != (gam.shape[1],):
        raise SimulationError(f"beta needs {gam.shape[1]} entries")
    variances = np.repeat(np.asarray(spec.random_var, dtype=float), spec.m)
    if variances.shape != (z.shape[1],):
        raise SimulationError("random_var needs one entry per random term")
    u = np.sqrt(spec.sigma2 * variances) * rng.standard_normal(z.shape[1])
    eps = np.sqrt(spec.sigma2) * rng.standard_normal((grid.n, spec.m))
    mean = (gam @ beta + z @ u).reshape(spec.m, grid.n).T
    y = mean + x + eps
    data = MixedModelData(grid, y, gam, z)
    truth = dict(x=x, u=u, beta=beta, fixed_names=fixed_names, random_names=random_names,
                 G=np.diag(variances))
    return data, truth
