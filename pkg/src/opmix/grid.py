"""Discretizations of an interval and the piecewise-linear embedding of grid data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EQUIDISTANT_TOL = 1e-12


class GridError(ValueError):
    pass


def _equidistant_points(a: float, b: float, n: int) -> np.ndarray:
    return a + (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n) * (b - a)


def multiplication_weights(a: float, b: float, points: np.ndarray) -> np.ndarray:
    """Weights mu_n = 2 / (t_{n+1} - t_{n-1}) with t_0 = a and t_{N+1} = b."""
    ext = np.concatenate(([a], points, [b]))
    lo = ext[:-2].copy()
    hi = ext[2:].copy()
    # end cells are reflected: 2/(t_2 + t_1 - 2a) and 2/(2b - t_N - t_{N-1})
    lo[0] = 2 * a - points[0]
    hi[-1] = 2 * b - points[-1]
    return 2.0 / (hi - lo)


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    points: np.ndarray
    equidistant: bool
    mesh: float | None
    mu: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return self.b - self.a

    def nodes(self) -> np.ndarray:
        """Grid points with the endpoints a and b adjoined."""
        return np.concatenate(([self.a], self.points, [self.b]))


def make_grid(a: float, b: float, n: int | None = None, points=None) -> Grid:
    """Build a grid on [a, b].

    Either ``n`` (equidistant, midpoint-of-cell points) or explicit ``points``
    must be given. Explicit points that coincide with the equidistant layout
    up to ``1e-12 * (b - a)`` are flagged as equidistant.
    """
    a = float(a)
    b = float(b)
    if not b > a:
        raise GridError(f"need b > a, got a={a}, b={b}")
    if points is None:
        if n is None:
            raise GridError("either n or points is required")
        if n < 2:
            raise GridError(f"need at least 2 points, got {n}")
        pts = _equidistant_points(a, b, int(n))
        return Grid(a, b, pts, True, (b - a) / n, np.full(n, n / (b - a)))

    pts = np.asarray(points, dtype=float).ravel()
    if pts.size < 2:
        raise GridError(f"need at least 2 points, got {pts.size}")
    if n is not None and n != pts.size:
        raise GridError("n does not match the number of points")
    if np.any(np.diff(pts) <= 0):
        raise GridError("points must be strictly increasing")
    if pts[0] <= a or pts[-1] >= b:
        raise GridError("points must lie strictly inside (a, b)")
    m = pts.size
    ref = _equidistant_points(a, b, m)
    if np.max(np.abs(pts - ref)) <= EQUIDISTANT_TOL * (b - a):
        return Grid(a, b, pts, True, (b - a) / m, np.full(m, m / (b - a)))
    return Grid(a, b, pts, False, None, multiplication_weights(a, b, pts))


@dataclass(frozen=True)
class EmbeddedFunction:
    """Piecewise-linear function through (t_n, z_n), flat on the end cells."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.n:
            raise GridError("values length does not match grid")

    def __call__(self, t):
        return embed_eval(self, t)


def embed_eval(e: EmbeddedFunction, t):
    g = e.grid
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < g.a) or np.any(t_arr > g.b):
        raise GridError(f"t outside [{g.a}, {g.b}]")
    z = np.asarray(e.values, dtype=float)
    out = np.interp(t_arr, g.nodes(), np.concatenate(([z[0]], z, [z[-1]])))
    return float(out) if np.ndim(out) == 0 else out


def weighted_sum_identity_check(grid: Grid, z) -> float:
    """Return the integral of E_z over [a, b] divided by the mesh.

    The integral is taken exactly segment by segment. On an equidistant grid
    the half-width end cells make this equal to sum(z).
    """
    if not grid.equidistant:
        raise GridError("identity only holds on equidistant grids")
    z = np.asarray(z, dtype=float)
    nodes = grid.nodes()
    vals = np.concatenate(([z[0]], z, [z[-1]]))
    integral = np.sum(np.diff(nodes) * (vals[1:] + vals[:-1]) / 2.0)
    return float(integral / grid.mesh)
