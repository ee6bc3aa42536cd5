"""Linear-time evaluation of d^mu (I + delta L)^{-1} E_z at the grid points.

The convolution of the Green's function with the piecewise-linear embedding
splits into four exponentially weighted sums over the grid. Two of them are
first-order recurrences with decaying multipliers e^{delta J-} (forward) and
e^{-delta J+} (backward); the boundary-coupled pair are cumulative sums of
terms that already carry decaying exponentials. Nothing is ever multiplied by
a growing exponential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .green import GreenError, _real, boundary_exponentials, inner_matrices, phi_psi_arrays
from .grid import Grid
from .operator import SpectralFactorization

SERIES_TOL = 1e-4


class SolveError(ValueError):
    pass


@dataclass(frozen=True)
class XiWeights:
    xi_m: np.ndarray
    xi_p: np.ndarray
    xi_m0: np.ndarray
    xi_p0: np.ndarray
    xi_m1: np.ndarray
    xi_p1: np.ndarray


def _half_cell(x: np.ndarray) -> np.ndarray:
    """(e^{x/2} - 1) / x."""
    small = np.abs(x) < SERIES_TOL
    xs = np.where(small, 1.0, x)
    direct = np.expm1(xs / 2) / xs
    series = 0.5 + x / 8 + x**2 / 48 + x**3 / 384
    return np.where(small, series, direct)


def _ramp_down(x: np.ndarray) -> np.ndarray:
    """(1 - (1 - x) e^x) / x^2."""
    small = np.abs(x) < SERIES_TOL
    xs = np.where(small, 1.0, x)
    direct = (xs * np.exp(xs) - np.expm1(xs)) / xs**2
    series = 0.5 + x / 3 + x**2 / 8 + x**3 / 30
    return np.where(small, series, direct)


def _ramp_up(x: np.ndarray) -> np.ndarray:
    """(e^x - 1 - x) / x^2."""
    small = np.abs(x) < SERIES_TOL
    xs = np.where(small, 1.0, x)
    direct = (np.expm1(xs) - xs) / xs**2
    series = 0.5 + x / 6 + x**2 / 24 + x**3 / 120
    return np.where(small, series, direct)


def xi_weights(fac: SpectralFactorization) -> XiWeights:
    """Segment integrals of e^{-eta s} against the hat functions of E_z."""
    d = fac.delta
    xm = d * fac.eta_minus
    xp = d * fac.eta_plus
    return XiWeights(
        xi_m=d * _half_cell(xm),
        xi_p=d * _half_cell(-xp),
        xi_m0=d * _ramp_down(xm),
        xi_p0=d * _ramp_up(-xp),
        xi_m1=d * _ramp_up(xm),
        xi_p1=d * _ramp_down(-xp),
    )


@dataclass(frozen=True)
class SolveResult:
    grid: Grid
    orders: tuple[int, ...]
    values: np.ndarray  # (N, len(orders)) or (N, len(orders), m)

    def order(self, mu: int) -> np.ndarray:
        return self.values[:, self.orders.index(mu)]


def _check_inputs(fac: SpectralFactorization, grid: Grid, z: np.ndarray, orders):
    if not grid.equidistant:
        raise SolveError("the linear-time solve needs an equidistant grid")
    if fac.v != 1.0:
        raise SolveError("factorization must be built with v = 1")
    if abs(fac.delta - grid.mesh) > 1e-12 * grid.mesh or fac.a != grid.a or fac.b != grid.b:
        raise SolveError("factorization does not match the grid (mesh or interval)")
    if z.shape[0] != grid.n:
        raise SolveError(f"z has {z.shape[0]} rows, grid has {grid.n} points")
    for mu in orders:
        if not 0 <= mu <= 2 * fac.k - 1:
            raise SolveError(f"derivative order {mu} outside 0..{2 * fac.k - 1}")


def _scan(mult: complex, x: np.ndarray) -> np.ndarray:
    """y_n = mult * y_{n-1} + x_n along axis 0."""
    return lfilter([1.0], [1.0, -mult], x, axis=0)


def _l1(x: np.ndarray) -> np.ndarray:
    return (np.abs(x.real) + np.abs(x.imag)).sum(axis=1)


def solve_grid_complex(fac: SpectralFactorization, grid: Grid, z, orders=(0,)):
    """Complex-valued solve; returns (values, magnitudes) each (N, len(orders), m)."""
    z = np.asarray(z, dtype=float)
    squeeze = z.ndim == 1
    z2 = z[:, None] if squeeze else z
    orders = tuple(int(mu) for mu in orders)
    _check_inputs(fac, grid, z2, orders)
    n, m = z2.shape
    k = fac.k
    d = fac.delta
    em, ep = fac.eta_minus, fac.eta_plus
    pa, pb = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm
    xi = xi_weights(fac)
    t = grid.points

    z_prev = np.vstack([np.zeros((1, m)), z2[:-1]])  # z_{n-1}
    z_next = np.vstack([z2[1:], np.zeros((1, m))])   # z_{n+1}

    fwd = np.empty((n, k, m), dtype=complex)
    bwd = np.empty((n, k, m), dtype=complex)
    for i in range(k):
        # J- recurrence: T_n = e^{d eta} T_{n-1} + xi1 z_n + xi0 z_{n-1}, T_1 = xi z_1
        src = xi.xi_m1[i] * z2 + xi.xi_m0[i] * z_prev
        src[0] = xi.xi_m[i] * z2[0]
        fwd[:, i, :] = _scan(np.exp(d * em[i]), src)
        # J+ recurrence run backwards: U_n = e^{-d eta} U_{n+1} + xi0 z_n + xi1 z_{n+1}, U_N = xi z_N
        src = xi.xi_p0[i] * z2 + xi.xi_p1[i] * z_next
        src[-1] = xi.xi_p[i] * z2[-1]
        bwd[:, i, :] = _scan(np.exp(-d * ep[i]), src[::-1])[::-1]

    # boundary-coupled cumulative sums
    ex = boundary_exponentials(fac, t)
    ep_left = ex["ep_ta"]   # e^{-(t_j - a) J+}
    em_right = ex["em_bt"]  # e^{(b - t_j) J-}
    inc_a = np.empty((n, k, m), dtype=complex)
    inc_a[0] = xi.xi_p[:, None] * z2[0][None, :]
    inc_a[1:] = ep_left[:-1, :, None] * (xi.xi_p0[None, :, None] * z2[:-1, None, :]
                                         + xi.xi_p1[None, :, None] * z2[1:, None, :])
    acc_a = np.cumsum(inc_a, axis=0)
    inc_b = np.empty((n, k, m), dtype=complex)
    inc_b[-1] = xi.xi_m[:, None] * z2[-1][None, :]
    inc_b[:-1] = em_right[1:, :, None] * (xi.xi_m0[None, :, None] * z2[:-1, None, :]
                                          + xi.xi_m1[None, :, None] * z2[1:, None, :])
    acc_b = np.cumsum(inc_b[::-1], axis=0)[::-1]

    # h_minus: everything hit by phi_mu; h_plus: everything hit by psi_mu
    h_minus = fac.vm[None, :, None] * fwd + ex["em_ta"][:, :, None] * np.einsum(
        "ij,njm->nim", pa, fac.vp[None, :, None] * acc_a)
    h_plus = fac.vp[None, :, None] * bwd + ex["ep_bt"][:, :, None] * np.einsum(
        "ij,njm->nim", pb, fac.vm[None, :, None] * acc_b)

    i_x, i_y = inner_matrices(fac, ex)
    if k == 1:
        g_minus = h_minus / i_x[:, :, :1]
        g_plus = h_plus / i_y[:, :, :1]
    else:
        g_minus = np.linalg.solve(i_x, h_minus)
        g_plus = np.linalg.solve(i_y, h_plus)

    vals = np.empty((n, len(orders), m), dtype=complex)
    mags = np.empty((n, len(orders), m))
    for col, mu in enumerate(orders):
        # phi_mu = w (I - X)^{-1} / lead with w = v1 J-^mu - v1 J+^mu e^{-(b-t)J+} P_b e^{(b-t)J-}
        w_phi = em[None] ** mu - ((ep[None] ** mu * ex["ep_bt"]) @ pb) * ex["em_bt"]
        w_psi = ep[None] ** mu - ((em[None] ** mu * ex["em_ta"]) @ pa) * ex["ep_ta"]
        lo = w_phi[:, :, None] * g_minus
        hi = w_psi[:, :, None] * g_plus
        vals[:, col, :] = (lo.sum(axis=1) - hi.sum(axis=1)) / fac.lead
        # |re| + |im| bounds the modulus within a factor sqrt(2) and is cheaper
        mags[:, col, :] = (_l1(lo) + _l1(hi)) / abs(fac.lead)
    return vals, mags, squeeze


def solve_grid(fac: SpectralFactorization, grid: Grid, z, orders=(0,)) -> SolveResult:
    """Evaluate d^mu (I + delta L)^{-1} E_z(t_n) for all n in O(N k) time.

    ``z`` may be a vector or an (N, m) matrix of columns solved together.
    ``values`` has shape (N, len(orders)) for vector input and
    (N, len(orders), m) for matrix input.
    """
    vals, mags, squeeze = solve_grid_complex(fac, grid, z, orders)
    try:
        real = _real(vals, mags, what="solve")
    except GreenError as exc:
        raise SolveError(str(exc)) from exc
    if squeeze:
        real = real[:, :, 0]
    return SolveResult(grid, tuple(int(mu) for mu in orders), real)


def solve_grid_bruteforce(fac: SpectralFactorization, grid: Grid, z, orders=(0,)) -> np.ndarray:
    """Direct O(N^2) evaluation of the eight exponentially weighted sums.

    Each exponential e^{(t_n - t_j) J} is formed explicitly per pair, so this
    is only usable for small N. Returns an (N, len(orders)) real array.
    """
    z = np.asarray(z, dtype=float)
    orders = tuple(int(mu) for mu in orders)
    _check_inputs(fac, grid, z[:, None], orders)
    n = grid.n
    t = grid.points
    a, b = grid.a, grid.b
    em, ep = fac.eta_minus, fac.eta_plus
    pa, pb = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm
    vm, vp = fac.vm, fac.vp
    xi = xi_weights(fac)
    tx = np.concatenate(([a], t, [b]))  # tx[j] = t_j with t_0 = a, t_{N+1} = b
    phi, psi = phi_psi_arrays(fac, t, orders)
    out = np.empty((n, len(orders)))
    for i in range(n):
        nn = i + 1
        tn = t[i]
        s1 = sum(np.exp((tn - tx[j + 1]) * em) * (vm * xi.xi_m0) * z[j - 1] for j in range(1, nn))
        s2 = sum(np.exp((tn - tx[j]) * em) * (vm * (xi.xi_m if j == 1 else xi.xi_m1)) * z[j - 1]
                 for j in range(1, nn + 1))
        s3 = sum(np.exp(-(tx[j] - tn) * ep) * (vp * (xi.xi_p0 if j < n else xi.xi_p)) * z[j - 1]
                 for j in range(nn, n + 1))
        s4 = sum(np.exp(-(tx[j - 1] - tn) * ep) * (vp * xi.xi_p1) * z[j - 1] for j in range(nn + 1, n + 1))
        s5 = sum(np.exp(-(tx[j] - a) * ep) * (vp * xi.xi_p0) * z[j - 1] for j in range(1, nn))
        s6 = sum(np.exp(-(tx[j - 1] - a) * ep) * (vp * (xi.xi_p if j == 1 else xi.xi_p1)) * z[j - 1]
                 for j in range(1, nn + 1))
        s7 = sum(np.exp((b - tx[j + 1]) * em) * (vm * (xi.xi_m0 if j < n else xi.xi_m)) * z[j - 1]
                 for j in range(nn, n + 1))
        s8 = sum(np.exp((b - tx[j]) * em) * (vm * xi.xi_m1) * z[j - 1] for j in range(nn + 1, n + 1))
        zero = np.zeros(fac.k, dtype=complex)
        s1, s4, s5, s8 = (zero + s for s in (s1, s4, s5, s8))
        left_a = np.exp((tn - a) * em)[:, None] * pa
        right_b = np.exp(-(b - tn) * ep)[:, None] * pb
        for col in range(len(orders)):
            ph, ps = phi[i, col], psi[i, col]
            val = (ph @ s1 + ph @ s2 - ps @ s3 - ps @ s4
                   + ph @ (left_a @ s5) + ph @ (left_a @ s6)
                   - ps @ (right_b @ s7) - ps @ (right_b @ s8))
            out[i, col] = val.real
    return out
