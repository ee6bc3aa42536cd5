"""Green's function of v I + delta L and its t-derivatives.

``green_eval`` uses the rearranged form in which every exponential has a
non-positive real exponent, so it stays finite for arbitrarily stiff
operators. ``green_eval_naive`` assembles the textbook formula through the
2k x 2k boundary matrix H and only works while exp(eta * t) is representable;
it is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operator import OperatorError, SpectralFactorization

IMAG_RTOL = 1e-8
NAIVE_EXP_LIMIT = 300.0


class GreenError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PhiPsi:
    t: float
    mu_order: int
    phi: np.ndarray
    psi: np.ndarray


def _check_t(fac: SpectralFactorization, t: np.ndarray):
    tol = 1e-12 * (fac.b - fac.a)
    if np.any(t < fac.a - tol) or np.any(t > fac.b + tol):
        raise GreenError(f"t outside [{fac.a}, {fac.b}]")


def _check_mu(fac: SpectralFactorization, mu: int):
    if not 0 <= mu <= 2 * fac.k - 1:
        raise GreenError(f"derivative order {mu} outside 0..{2 * fac.k - 1}")


def boundary_exponentials(fac: SpectralFactorization, t: np.ndarray) -> dict:
    """Decaying exponentials at points t, each of shape (len(t), k)."""
    em, ep = fac.eta_minus, fac.eta_plus
    ta = (t - fac.a)[:, None]
    bt = (fac.b - t)[:, None]
    return dict(
        em_ta=np.exp(ta * em),   # e^{(t-a) J-}
        em_bt=np.exp(bt * em),   # e^{(b-t) J-}
        ep_ta=np.exp(-ta * ep),  # e^{-(t-a) J+}
        ep_bt=np.exp(-bt * ep),  # e^{-(b-t) J+}
    )


def inner_matrices(fac: SpectralFactorization, ex: dict) -> tuple[np.ndarray, np.ndarray]:
    """I - X_t and I - Y_t whose inverses close phi_mu and psi_mu.

    X_t = e^{(t-a)J-} P_a e^{-(b-a)J+} P_b e^{(b-t)J-},
    Y_t = e^{-(b-t)J+} P_b e^{(b-a)J-} P_a e^{-(t-a)J+}.
    """
    k = fac.k
    length = fac.b - fac.a
    pa, pb = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm
    mid_x = pa * np.exp(-length * fac.eta_plus)[None, :] @ pb
    mid_y = pb * np.exp(length * fac.eta_minus)[None, :] @ pa
    x = ex["em_ta"][:, :, None] * mid_x[None] * ex["em_bt"][:, None, :]
    y = ex["ep_bt"][:, :, None] * mid_y[None] * ex["ep_ta"][:, None, :]
    eye = np.eye(k)
    return eye - x, eye - y


def _row_solve(mat: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Solve r (mat) = rows for row vectors r; mat (n, k, k), rows (n, ..., k)."""
    if mat.shape[-1] == 1:
        return rows / mat[:, 0, 0].reshape((-1,) + (1,) * (rows.ndim - 1))
    # r mat = w  <=>  mat^T r^T = w^T
    mt = np.swapaxes(mat, -1, -2)
    shp = rows.shape
    flat = rows.reshape(shp[0], -1, shp[-1])
    sol = np.linalg.solve(mt, np.swapaxes(flat, -1, -2))
    return np.swapaxes(sol, -1, -2).reshape(shp)


def phi_psi_arrays(fac: SpectralFactorization, t, mus) -> tuple[np.ndarray, np.ndarray]:
    """phi_mu(t) and psi_mu(t) for arrays of t; returns two (len(t), len(mus), k) arrays."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    mus = list(mus)
    _check_t(fac, t)
    for mu in mus:
        _check_mu(fac, mu)
    em, ep = fac.eta_minus, fac.eta_plus
    pa, pb = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm
    ex = boundary_exponentials(fac, t)
    i_x, i_y = inner_matrices(fac, ex)
    pow_m = np.stack([em ** mu for mu in mus])  # (nmu, k)
    pow_p = np.stack([ep ** mu for mu in mus])
    # v1 J+^mu e^{-(b-t)J+} P_b e^{(b-t)J-}
    corr_phi = ((pow_p[None] * ex["ep_bt"][:, None, :]) @ pb) * ex["em_bt"][:, None, :]
    corr_psi = ((pow_m[None] * ex["em_ta"][:, None, :]) @ pa) * ex["ep_ta"][:, None, :]
    w_phi = pow_m[None] - corr_phi
    w_psi = pow_p[None] - corr_psi
    phi = _row_solve(i_x, w_phi) / fac.lead
    psi = _row_solve(i_y, w_psi) / fac.lead
    return phi, psi


def phi_psi(fac: SpectralFactorization, t: float, mu: int = 0) -> PhiPsi:
    phi, psi = phi_psi_arrays(fac, [t], [mu])
    return PhiPsi(float(t), int(mu), phi[0, 0], psi[0, 0])


def _real(val, mag=None, what: str = "Green's function"):
    """Real part of val; the imaginary part must be negligible.

    ``mag`` is the size of the summands that produced val; cancellation down
    to roundoff of that size is tolerated.
    """
    val = np.asarray(val)
    if np.any(~np.isfinite(val)):
        raise GreenError(f"{what} is not finite")
    re = val.real
    floor = 0.0 if mag is None else 1e-12 * np.asarray(mag)
    if np.any(np.abs(val.imag) > IMAG_RTOL * (np.abs(re) + 1e-300) + floor):
        raise GreenError(f"{what} has a non-negligible imaginary part")
    return re


def kernel_scale(fac: SpectralFactorization) -> float:
    """Size of the free-space kernel at t = s; floor for cancellation checks."""
    return float((np.sum(np.abs(fac.vm)) + np.sum(np.abs(fac.vp))) / abs(fac.lead))


def green_eval_complex(fac: SpectralFactorization, t, s, mu: int = 0) -> np.ndarray:
    t, s = np.broadcast_arrays(np.atleast_1d(np.asarray(t, float)), np.atleast_1d(np.asarray(s, float)))
    t, s = t.ravel(), s.ravel()
    _check_t(fac, s)
    phi, psi = phi_psi_arrays(fac, t, [mu])
    phi, psi = phi[:, 0], psi[:, 0]
    em, ep = fac.eta_minus, fac.eta_plus
    pa, pb = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm
    a, b = fac.a, fac.b
    sa = (s - a)[:, None]
    bs = (b - s)[:, None]
    lower = s <= t
    dt = np.where(lower, t - s, s - t)[:, None]
    # s <= t: e^{(t-s)J-} (v- + e^{(s-a)J-} P_a e^{-(s-a)J+} v+)
    vec_lo = np.exp(dt * em) * (fac.vm + np.exp(sa * em) * ((np.exp(-sa * ep) * fac.vp) @ pa.T))
    # t < s: e^{-(s-t)J+} (v+ + e^{-(b-s)J+} P_b e^{(b-s)J-} v-)
    vec_hi = np.exp(-dt * ep) * (fac.vp + np.exp(-bs * ep) * ((np.exp(bs * em) * fac.vm) @ pb.T))
    lo_val = np.sum(phi * vec_lo, axis=-1)
    hi_val = -np.sum(psi * vec_hi, axis=-1)
    floor = kernel_scale(fac) * max(1.0, np.max(np.abs(fac.eta)) ** mu)
    lo_mag = np.sum(np.abs(phi * vec_lo), axis=-1) + floor
    hi_mag = np.sum(np.abs(psi * vec_hi), axis=-1) + floor
    return np.where(lower, lo_val, hi_val), np.where(lower, lo_mag, hi_mag)


def green_eval(fac: SpectralFactorization, t, s, mu: int = 0):
    """mu-th t-derivative of the Green's function, stable form.

    At t == s the s <= t branch is used, so for mu >= 1 the value is the limit
    from t > s.
    """
    out = _real(*green_eval_complex(fac, t, s, mu))
    return float(out[0]) if np.ndim(t) == 0 and np.ndim(s) == 0 else out


def green_diag_stable(fac: SpectralFactorization, t):
    """G(t, t) with the (I - X)^{-1} = I + X (I - X)^{-1} rearrangement."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    _check_t(fac, t_arr)
    em, ep = fac.eta_minus, fac.eta_plus
    pa, pb, bmat = fac.FaWm_inv_FaWp, fac.FbWp_inv_FbWm, fac.B
    length = fac.b - fac.a
    ex = boundary_exponentials(fac, t_arr)
    em_ba = np.exp(length * em)
    ones = np.ones_like(em)
    # v1 - v1 e^{-(b-t)J+} P_b e^{(b-t)J-}
    left1 = ones - (ex["ep_bt"] @ pb) * ex["em_bt"]
    right1 = fac.vm + ex["em_ta"] * ((ex["ep_ta"] * fac.vp) @ pa.T)
    # v1 e^{(t-a)J-} - v1 e^{-(b-t)J+} P_b e^{(b-a)J-}
    left2 = ex["em_ta"] - (ex["ep_bt"] @ pb) * em_ba
    right2 = ex["em_bt"] * fac.vm + em_ba * ((ex["ep_ta"] * fac.vp) @ pa.T)
    p1 = left1 * right1
    p2 = (left2 @ bmat) * right2
    val = np.sum(p1, -1) + np.sum(p2, -1)
    mag = np.sum(np.abs(p1), -1) + np.sum(np.abs(p2), -1)
    out = _real(val / fac.lead, mag / abs(fac.lead) + kernel_scale(fac))
    return float(out[0]) if np.ndim(t) == 0 else out


def green_eval_naive(fac: SpectralFactorization, t, s, mu: int = 0):
    """Green's function assembled through H = F_a W e^{aJ} + F_b W e^{bJ}."""
    _check_mu(fac, mu)
    t, s = float(t), float(s)
    _check_t(fac, np.array([t, s]))
    eta = fac.eta
    reach = max(abs(fac.a), abs(fac.b), fac.b - fac.a)
    if np.max(np.abs(eta.real)) * reach > NAIVE_EXP_LIMIT:
        raise GreenError("exponent range too large for the explicit formula")
    k = fac.k
    w = np.concatenate([fac.Wm, fac.Wp], axis=1)
    fa_bar = np.zeros((2 * k, 2 * k))
    fa_bar[:k] = fac.Fa
    fb_bar = np.zeros((2 * k, 2 * k))
    fb_bar[k:] = fac.Fb
    h = fa_bar @ w * np.exp(fac.a * eta)[None, :] + fb_bar @ w * np.exp(fac.b * eta)[None, :]
    if np.linalg.cond(h) > 1e14:
        raise GreenError("H is singular; operator not invertible under these boundary conditions")
    wv2 = np.linalg.solve(w, np.eye(2 * k)[:, -1])
    row = eta ** mu * np.exp(t * eta)
    if s <= t:
        col = fa_bar @ (w @ (np.exp((fac.a - s) * eta) * wv2))
        val = row @ np.linalg.solve(h, col)
    else:
        col = fb_bar @ (w @ (np.exp((fac.b - s) * eta) * wv2))
        val = -row @ np.linalg.solve(h, col)
    mag = np.abs(row) @ np.abs(np.linalg.solve(h, col))
    return float(_real(np.array([val / fac.lead]), 1e2 * mag / abs(fac.lead))[0])


__all__ = [
    "GreenError", "OperatorError", "PhiPsi", "phi_psi", "phi_psi_arrays",
    "green_eval", "green_eval_naive", "green_diag_stable",
]
