"""Operator approximation of log det(I + R0).

log det(I + R0) is written as an integral over v in [0, 1] of the trace of
(v I + R0^{-1})^{-1}. The trace is replaced by the integral of the diagonal
of the Green's function of v I + delta L, which has a closed form in terms of
the spectral factorization (eight terms). The outer v-integral is done by
Gauss-Legendre quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .operator import OperatorError, OperatorSpec, spectral_arrays

IMAG_RTOL = 1e-8


@dataclass(frozen=True)
class QuadratureSpec:
    """Outer quadrature over v.

    With ``split`` the interval is cut at v = 1/N; [0, 1/N] uses ``nodes``
    Gauss-Legendre points in v and [1/N, 1] uses ``nodes`` points in log v,
    where the integrand (roughly proportional to v^{-1/2k}) is smooth.
    Without ``split`` a single rule on [0, 1] is used.
    """

    nodes: int = 64
    split: bool = True

    def rule(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        if not self.split:
            return (x + 1) / 2, w / 2
        cut = 1.0 / n
        v_lo = cut * (x + 1) / 2
        w_lo = cut * w / 2
        lo_log = np.log(cut)
        s = lo_log + (x + 1) / 2 * (0.0 - lo_log)
        v_hi = np.exp(s)
        w_hi = (-lo_log) * w / 2 * v_hi
        return np.concatenate([v_lo, v_hi]), np.concatenate([w_lo, w_hi])


@dataclass(frozen=True)
class DiagIntegralParts:
    v: float
    A_mm: np.ndarray
    A_pp: np.ndarray
    A_mp: np.ndarray
    A_pm: np.ndarray
    terms: np.ndarray
    total: float


def _divided(num: np.ndarray, den: np.ndarray, limit: np.ndarray, same: np.ndarray) -> np.ndarray:
    out = np.empty_like(num)
    out[same] = limit[same]
    out[~same] = num[~same] / den[~same]
    return out


def _diag_terms(op: OperatorSpec, a: float, b: float, n: int, vs: np.ndarray):
    """The eight terms for each v in vs; returns (terms (nv, 8), A-matrices)."""
    vs = np.atleast_1d(np.asarray(vs, dtype=float))
    if np.any(vs <= 0) or np.any(vs > 1):
        raise OperatorError("v must lie in (0, 1]")
    delta = (b - a) / n
    length = b - a
    alpha_star = delta * np.tile(op.alpha, (len(vs), 1))
    alpha_star[:, 0] += vs
    arr = spectral_arrays(alpha_star, op.bc_a, op.bc_b, a, b)
    em, ep = arr["eta_minus"], arr["eta_plus"]
    vm, vp = arr["vm"], arr["vp"]
    pa, pb, bmat = arr["FaWm_inv_FaWp"], arr["FbWp_inv_FbWm"], arr["B"]
    k = op.k
    scale = np.max(np.abs(np.concatenate([em, ep], axis=-1)), axis=-1)[:, None, None]
    eye = np.eye(k, dtype=bool)[None]

    ei = np.exp(length * em)  # e^{(b-a) eta-}
    fi = np.exp(-length * ep)  # e^{-(b-a) eta+}
    # A_--
    dm = em[:, :, None] - em[:, None, :]
    same_m = np.broadcast_to(eye, dm.shape) | (np.abs(dm) < 1e-8 * scale)
    a_mm = _divided(ei[:, :, None] - ei[:, None, :], delta * dm,
                    np.broadcast_to(n * ei[:, :, None], dm.shape).astype(complex), same_m)
    # A_++
    dp = -ep[:, :, None] + ep[:, None, :]
    same_p = np.broadcast_to(eye, dp.shape) | (np.abs(dp) < 1e-8 * scale)
    a_pp = _divided(fi[:, :, None] - fi[:, None, :], delta * dp,
                    np.broadcast_to(n * fi[:, :, None], dp.shape).astype(complex), same_p)
    # A_-+ and A_+- (denominators never vanish: Re eta+ - Re eta- > 0)
    gap_mp = -em[:, :, None] + ep[:, None, :]
    a_mp = -np.expm1(-length * gap_mp) / (delta * gap_mp)
    gap_pm = ep[:, :, None] - em[:, None, :]
    a_pm = -np.expm1(-length * gap_pm) / (delta * gap_pm)

    tau = op.tau
    ones = np.ones((len(vs), 1, k))

    def quad_form(mat, right):
        return (ones @ mat @ right[:, :, None])[:, 0, 0] / tau

    pb_e_pa = pb @ (ei[:, :, None] * pa)        # P_b e^{(b-a)J-} P_a
    b_e_pa = bmat @ (ei[:, :, None] * pa)       # B e^{(b-a)J-} P_a
    pb_e_b = pb @ (ei[:, :, None] * bmat)       # P_b e^{(b-a)J-} B
    terms = np.stack([
        n * vm.sum(axis=-1) / tau,
        quad_form(pa * a_mp, vp),
        -quad_form(pb * a_pm, vm),
        -quad_form(pb_e_pa * a_pp, vp),
        quad_form(bmat * a_mm, vm),
        quad_form(b_e_pa * a_mp, vp),
        -quad_form(pb_e_b * a_pm, vm),
        -quad_form(pb_e_b @ (ei[:, :, None] * pa) * a_pp, vp),
    ], axis=-1)
    return terms, (a_mm, a_pp, a_mp, a_pm)


def _real_total(terms: np.ndarray) -> np.ndarray:
    total = terms.sum(axis=-1)
    mag = np.abs(terms).sum(axis=-1)
    if np.any(~np.isfinite(total)):
        raise ArithmeticError("diagonal integral is not finite")
    if np.any(np.abs(total.imag) > IMAG_RTOL * np.abs(total.real) + 1e-12 * mag):
        raise ArithmeticError("diagonal integral has a non-negligible imaginary part")
    return total.real


def diag_integral(op: OperatorSpec, grid: Grid, v: float) -> DiagIntegralParts:
    """Integral over [a, b] of G_v(t, t) for v I + delta L, as eight closed-form terms."""
    if not grid.equidistant:
        raise ValueError("closed-form diagonal integral needs an equidistant grid")
    terms, (a_mm, a_pp, a_mp, a_pm) = _diag_terms(op, grid.a, grid.b, grid.n, [v])
    total = float(_real_total(terms)[0])
    return DiagIntegralParts(float(v), a_mm[0], a_pp[0], a_mp[0], a_pm[0], terms[0].real, total)


def diag_integral_batch(op: OperatorSpec, grid: Grid, vs) -> np.ndarray:
    terms, _ = _diag_terms(op, grid.a, grid.b, grid.n, vs)
    return _real_total(terms)


def logdet_approx(op: OperatorSpec, grid: Grid, quad: QuadratureSpec | None = None) -> float:
    """Approximate log det(I + R0) by the double integral of G_v(t, t)."""
    if not grid.equidistant:
        raise ValueError("logdet_approx needs an equidistant grid")
    quad = quad or QuadratureSpec()
    vs, ws = quad.rule(grid.n)
    vals = diag_integral_batch(op, grid, vs)
    out = float(np.dot(ws, vals))
    if not np.isfinite(out):
        raise ArithmeticError("log-determinant quadrature is not finite")
    return out


def _log_cosh(x: float) -> float:
    return x + np.log1p(np.exp(-2 * x)) - np.log(2.0)


def _log_sinh_over(x: float) -> float:
    """log(sinh(x) / x)."""
    if x < 1e-4:
        return x * x / 6
    return x + np.log(-np.expm1(-2 * x)) - np.log(2.0) - np.log(x)


def logdet_closed_brownian(kind: str, lam: float, a: float, b: float, n: int) -> float:
    """Closed-form operator approximation for Brownian motion / bridge kernels."""
    if lam <= 0 or not b > a or n < 1:
        raise ValueError("need lam > 0, b > a and n >= 1")
    x = np.sqrt(b - a) * np.sqrt(n) / lam
    if kind == "motion":
        return float(_log_cosh(x))
    if kind == "bridge":
        return float(_log_sinh_over(x))
    raise ValueError(f"unknown kind {kind!r}")
