"""Dense reference implementation for small problems.

Builds R0 explicitly and fits the mixed model through the marginal covariance
V = I + Z G Z' + R0 (x) I_M with dense Cholesky factors. No operator
approximation is involved, so every fast path can be checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg

from .grid import Grid
from .mixed_model import FitResult, MixedModelData, ModelError, VarianceParams, from_blocks, to_blocks
from .operator import OperatorSpec, factorize

MAX_DENSE = 5000


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class DenseModel:
    R0: np.ndarray
    A0: np.ndarray
    chol_A0: np.ndarray

    @classmethod
    def from_matrix(cls, r0) -> "DenseModel":
        r0 = np.asarray(r0, dtype=float)
        if r0.ndim != 2 or r0.shape[0] != r0.shape[1]:
            raise OracleError("R0 must be square")
        if not np.allclose(r0, r0.T, atol=1e-10, rtol=0):
            raise OracleError("R0 is not symmetric")
        r0 = (r0 + r0.T) / 2
        a0 = np.eye(len(r0)) + r0
        try:
            chol = linalg.cholesky(a0, lower=True)
        except linalg.LinAlgError as exc:
            raise OracleError("I + R0 is not positive definite") from exc
        return cls(r0, a0, chol)

    @property
    def n(self) -> int:
        return self.R0.shape[0]

    def logdet_A0(self) -> float:
        return float(2 * np.sum(np.log(np.diag(self.chol_A0))))


def build_R0(kind: str, grid: Grid, lam: float = 1.0, op: OperatorSpec | None = None, v: float = 0.0,
             check_pd: bool = True) -> DenseModel:
    """R0 on the grid for 'motion', 'bridge' or 'generic' (Green's function of op)."""
    t = grid.points
    if grid.n > MAX_DENSE:
        raise OracleError(f"N={grid.n} exceeds the dense limit {MAX_DENSE}")
    lo = np.minimum.outer(t, t)
    hi = np.maximum.outer(t, t)
    a, b = grid.a, grid.b
    if kind == "motion":
        r0 = (lo - a) / lam**2
    elif kind == "bridge":
        r0 = (lo - a) * (b - hi) / ((b - a) * lam**2)
    elif kind == "generic":
        if op is None:
            raise OracleError("generic kernel needs an operator")
        from .green import green_eval

        fac = factorize(op, v, 1.0, a, b)
        tt, ss = np.meshgrid(t, t, indexing="ij")
        r0 = np.asarray(green_eval(fac, tt.ravel(), ss.ravel())).reshape(grid.n, grid.n)
        r0 = (r0 + r0.T) / 2
    else:
        raise OracleError(f"unknown kernel {kind!r}")
    model = DenseModel.from_matrix(r0)
    if check_pd:
        try:
            linalg.cholesky(model.R0, lower=True)
        except linalg.LinAlgError as exc:
            raise OracleError("R0 is not positive definite") from exc
    return model


def _guard(data: MixedModelData, dense: DenseModel):
    if data.n_total > MAX_DENSE:
        raise OracleError(f"N*M={data.n_total} exceeds the dense limit {MAX_DENSE}")
    if dense.n != data.n:
        raise OracleError("R0 size does not match the data")


def _marginal(data: MixedModelData, vp: VarianceParams, dense: DenseModel) -> np.ndarray:
    v = np.kron(np.eye(data.m), dense.A0)  # A = A0 (x) I_M in sample-major order
    if data.q:
        v = v + data.Z @ vp.G @ data.Z.T
    return v


def _fit_parts(data: MixedModelData, vp: VarianceParams, dense: DenseModel) -> dict:
    _guard(data, dense)
    v = _marginal(data, vp, dense)
    try:
        cf = linalg.cho_factor(v, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelError("marginal covariance is not positive definite") from exc
    y = from_blocks(data.y[:, :, None])[:, 0]
    gam = data.Gamma
    vinv_g = linalg.cho_solve(cf, gam)
    vinv_y = linalg.cho_solve(cf, y)
    if data.p:
        cb_inv = gam.T @ vinv_g
        c_beta = np.linalg.inv(cb_inv)
        beta = c_beta @ (gam.T @ vinv_y)
    else:
        cb_inv = np.zeros((0, 0))
        c_beta = cb_inv
        beta = np.zeros(0)
    e = y - gam @ beta
    vinv_e = linalg.cho_solve(cf, e)
    u = vp.G @ (data.Z.T @ vinv_e)
    e_blocks = to_blocks(vinv_e[:, None], data.n, data.m)[:, :, 0]
    x = dense.R0 @ e_blocks
    r0_blocks = to_blocks((e - data.Z @ u)[:, None], data.n, data.m)[:, :, 0]
    resid = r0_blocks - x
    return dict(
        cf=cf, beta=beta, u=u, x=x, resid=resid, c_beta=c_beta, cb_inv=cb_inv,
        quad=float(e @ vinv_e), logdet_v=float(2 * np.sum(np.log(np.diag(cf[0])))),
    )


def oracle_fit(data: MixedModelData, vp: VarianceParams, dense: DenseModel) -> FitResult:
    parts = _fit_parts(data, vp, dense)
    q = data.q
    if q:
        ainv_z = linalg.cho_solve((dense.chol_A0, True), to_blocks(data.Z, data.n, data.m).reshape(data.n, -1))
        ainv_z = from_blocks(ainv_z.reshape(data.n, data.m, q))
        c_u = np.linalg.inv(np.linalg.inv(vp.G) + data.Z.T @ ainv_z)
    else:
        c_u = np.zeros((0, 0))
    n2 = _neg2(data, vp, dense, parts)
    return FitResult(
        beta_hat=parts["beta"], u_blup=parts["u"], x_blup=parts["x"], residuals=parts["resid"],
        sigma2_profile=parts["quad"] / (data.n_total - data.p), neg2_relik=n2,
        C_beta=parts["c_beta"], C_u=c_u, terms=dict(quadratic=parts["quad"], logdet_v=parts["logdet_v"]),
    )


def _neg2(data, vp, dense, parts) -> float:
    logdet_cb = 0.0
    if data.p:
        sign, logdet_cb = np.linalg.slogdet(parts["cb_inv"])
        if sign <= 0:
            raise ModelError("C_beta is not positive definite")
    return float((data.n_total - data.p) * np.log(vp.sigma2) + parts["logdet_v"] + logdet_cb
                 + parts["quad"] / vp.sigma2)


def oracle_neg2relik(data: MixedModelData, vp: VarianceParams, dense: DenseModel) -> float:
    """-2 log restricted likelihood with exact determinants."""
    return _neg2(data, vp, dense, _fit_parts(data, vp, dense))


def logdet_integral(r0, epsabs: float = 1e-11, epsrel: float = 1e-11) -> float:
    """Integral over v in [0, 1] of tr((v I + R0^{-1})^{-1}) by adaptive quadrature.

    Uses the eigenvalues of R0: tr((vI + R0^{-1})^{-1}) = sum_i r_i / (1 + v r_i).
    """
    r0 = np.asarray(r0, dtype=float)
    lam = np.linalg.eigvalsh((r0 + r0.T) / 2)
    if np.any(lam <= 0):
        raise OracleError("R0 must be positive definite")
    val, _ = integrate.quad(lambda v: float(np.sum(lam / (1 + v * lam))), 0.0, 1.0,
                            epsabs=epsabs, epsrel=epsrel, limit=200)
    return float(val)


def logdet_integral_direct(r0, epsabs: float = 1e-10, epsrel: float = 1e-10) -> float:
    """Same integral with the trace taken from an explicit inverse at each v (slow, no eigen-shortcut)."""
    r0 = np.asarray(r0, dtype=float)
    r0_inv = np.linalg.inv(r0)
    eye = np.eye(len(r0))
    val, _ = integrate.quad(lambda v: float(np.trace(np.linalg.inv(v * eye + r0_inv))), 0.0, 1.0,
                            epsabs=epsabs, epsrel=epsrel, limit=200)
    return float(val)


def dense_for_operator(op: OperatorSpec, grid: Grid) -> DenseModel:
    """Dense R0 for an operator: closed forms for lam*d with Brownian conditions, else the Green's function of L."""
    if len(op.penalties) == 1 and op.k == 1 and op.penalties[0][0] == 0.0 and op.bc_a == (0,):
        lam = abs(op.penalties[0][1])
        if op.bc_b == (1,):
            return build_R0("motion", grid, lam)
        if op.bc_b == (0,):
            return build_R0("bridge", grid, lam)
    return build_R0("generic", grid, op=op)
