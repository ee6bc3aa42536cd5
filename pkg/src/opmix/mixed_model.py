"""GLS estimates, BLUPs and the restricted likelihood for

    y = Gamma beta + Z u + x + eps,  u ~ N(0, s2 G), x ~ N(0, s2 R0 (x) I_M), eps ~ N(0, s2 I).

Every product with A^{-1} = (I + R0)^{-1} (x) I_M goes through the linear-time
solver, A^{-1} z = z - (I + delta L)^{-1} E_z, applied column-wise to the
samples and to the per-sample sections of the design matrices. The only
dense factorizations are p x p and q x q.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .fast_apply import solve_grid
from .grid import Grid
from .logdet import QuadratureSpec, logdet_approx
from .operator import OperatorError, OperatorSpec, factorize

log = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


def _as_design(mat, n_total: int) -> np.ndarray:
    if mat is None:
        return np.zeros((n_total, 0))
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[:, None]
    if mat.shape[0] != n_total:
        raise ModelError(f"design has {mat.shape[0]} rows, expected {n_total}")
    return mat


@dataclass(frozen=True)
class MixedModelData:
    """Observations y (N x M) and designs with rows ordered (m - 1) * N + n."""

    grid: Grid
    y: np.ndarray
    Gamma: np.ndarray = None
    Z: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape[0] != self.grid.n:
            raise ModelError(f"y has {y.shape[0]} rows, grid has {self.grid.n} points")
        n_total = y.size
        gam = _as_design(self.Gamma, n_total)
        z = _as_design(self.Z, n_total)
        for name, mat in (("Gamma", gam), ("Z", z)):
            if mat.shape[1] and np.linalg.matrix_rank(mat) < mat.shape[1]:
                raise ModelError(f"{name} does not have full column rank")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Gamma", gam)
        object.__setattr__(self, "Z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.Gamma.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def n_total(self) -> int:
        return self.y.size


def to_blocks(cols: np.ndarray, n: int, m: int) -> np.ndarray:
    """(N*M, c) sample-major columns -> (N, M, c)."""
    return cols.reshape(m, n, -1).transpose(1, 0, 2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    """(N, M, c) -> (N*M, c)."""
    n, m, c = blocks.shape
    return blocks.transpose(1, 0, 2).reshape(n * m, c)


@dataclass(frozen=True)
class VarianceParams:
    sigma2: float
    G: np.ndarray
    op: OperatorSpec

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ModelError("sigma2 must be positive")
        g = np.atleast_2d(np.asarray(self.G, dtype=float)) if np.size(self.G) else np.zeros((0, 0))
        if g.shape[0] != g.shape[1] or not np.allclose(g, g.T):
            raise ModelError("G must be square and symmetric")
        if g.size:
            np.linalg.cholesky(g)
        object.__setattr__(self, "G", g)


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    u_blup: np.ndarray
    x_blup: np.ndarray
    residuals: np.ndarray
    sigma2_profile: float
    neg2_relik: float
    C_beta: np.ndarray
    C_u: np.ndarray
    x_blup_deriv: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)


class AinvOperator:
    """z -> A0^{-1} z for (N,) or (N, m) input, via (I + delta L)^{-1}."""

    def __init__(self, grid: Grid, op: OperatorSpec):
        if not grid.equidistant:
            raise ModelError("the fast path needs an equidistant grid")
        self.grid = grid
        self.op = op
        self.fac = factorize(op, 1.0, grid.mesh, grid.a, grid.b)

    def smooth(self, z, orders=(0,)) -> np.ndarray:
        """d^mu (I + delta L)^{-1} E_z at the grid points."""
        return solve_grid(self.fac, self.grid, z, orders).values

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        sm = self.smooth(z, (0,))
        return z - (sm[:, 0] if z.ndim == 1 else sm[:, 0, :])


def apply_Ainv(data: MixedModelData | Grid, op: OperatorSpec) -> AinvOperator:
    grid = data.grid if isinstance(data, MixedModelData) else data
    return AinvOperator(grid, op)


def _logdet(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    sign, val = np.linalg.slogdet(mat)
    if sign <= 0:
        raise ModelError("matrix is not positive definite")
    return float(val)


def gls_fit(data: MixedModelData, vp: VarianceParams, orders=(), quad: QuadratureSpec | None = None,
            ainv: AinvOperator | None = None) -> FitResult:
    """GLS estimate of beta, BLUPs of u and x, and the restricted likelihood at vp.

    ``orders`` lists derivative orders of the smoothed curves to return in
    ``x_blup_deriv``; orders 0..k are always computed because the quadratic
    form of x uses them.
    """
    n, m, p, q = data.n, data.m, data.p, data.q
    op = vp.op
    if vp.G.shape != (q, q):
        raise ModelError(f"G must be {q} x {q}")
    ainv = ainv or AinvOperator(data.grid, op)

    # one solve for y and every design section
    stacked = np.concatenate([data.y[:, :, None], to_blocks(data.Gamma, n, m), to_blocks(data.Z, n, m)], axis=2)
    solved = ainv(stacked.reshape(n, -1)).reshape(n, m, 1 + p + q)
    ainv_y = from_blocks(solved[:, :, :1])[:, 0]
    ainv_g = from_blocks(solved[:, :, 1:1 + p])
    ainv_z = from_blocks(solved[:, :, 1 + p:])
    y = from_blocks(data.y[:, :, None])[:, 0]
    gam, z, g = data.Gamma, data.Z, vp.G

    s_zz = z.T @ ainv_z
    eye_q = np.eye(q)
    core = eye_q + s_zz @ g  # I + Z'A^{-1}Z G
    if q:
        try:
            core_inv = np.linalg.inv(core)
        except np.linalg.LinAlgError as exc:
            raise ModelError("C_u is singular") from exc
    else:
        core_inv = np.zeros((0, 0))
    c_u = g @ core_inv  # (G^{-1} + Z'A^{-1}Z)^{-1}

    def cr_dot(left, right_ainv, left_ainv_z):
        # left' C_r right = left' A^{-1} right - (left' A^{-1} Z) C_u (Z' A^{-1} right)
        return left.T @ right_ainv - left_ainv_z @ c_u @ (z.T @ right_ainv)

    g_ainv_z = gam.T @ ainv_z
    cb_inv = cr_dot(gam, ainv_g, g_ainv_z)
    if p:
        try:
            c_beta = np.linalg.inv(cb_inv)
        except np.linalg.LinAlgError as exc:
            raise ModelError("C_beta is singular (collinear fixed effects)") from exc
        beta = c_beta @ cr_dot(gam, ainv_y, g_ainv_z)
    else:
        c_beta = np.zeros((0, 0))
        beta = np.zeros(0)

    resid_beta = y - gam @ beta
    ainv_rb = ainv_y - ainv_g @ beta
    # u = G (I + S G)^{-1} Z'A^{-1}(y - Gamma beta); u'G^{-1}u = w'Gw avoids inverting G
    w = np.linalg.solve(core, z.T @ ainv_rb) if q else np.zeros(0)
    u = g @ w
    u_quad = float(w @ u)

    r0 = resid_beta - z @ u
    r0_blocks = to_blocks(r0[:, None], n, m)[:, :, 0]
    k = op.k
    all_orders = sorted(set(range(k + 1)) | {int(mu) for mu in orders})
    sm = ainv.smooth(r0_blocks, all_orders)  # (N, orders, M)
    x_hat = sm[:, all_orders.index(0), :]
    resid = r0_blocks - x_hat
    derivs = {mu: sm[:, all_orders.index(mu), :] for mu in all_orders}

    rr = float(np.sum(resid**2))
    x_quad_identity = float(np.sum(x_hat * resid))
    x_quad_derivative = derivative_quadratic_form(op, data.grid.mesh, derivs)

    terms = dict(
        rr=rr, u_quad=u_quad, x_quad=x_quad_derivative, x_quad_identity=x_quad_identity,
        logdet_q=_logdet(core), logdet_cbinv=_logdet(cb_inv),
        logdet_a0=logdet_approx(op, data.grid, quad),
    )
    sigma2_hat = (rr + u_quad + x_quad_derivative) / (data.n_total - p)
    fit = FitResult(
        beta_hat=beta, u_blup=u, x_blup=x_hat, residuals=resid, sigma2_profile=sigma2_hat,
        neg2_relik=np.nan, C_beta=c_beta, C_u=c_u,
        x_blup_deriv={mu: derivs[mu] for mu in all_orders}, terms=terms,
    )
    return _with_neg2(fit, data, vp.sigma2)


def derivative_quadratic_form(op: OperatorSpec, delta: float, derivs: dict) -> float:
    """delta * sum_l sum_{m,n} (K_l x_m(t_n))^2 from derivative BLUPs."""
    total = 0.0
    for coefs in op.penalties:
        kx = sum(c * derivs[j] for j, c in enumerate(coefs) if c != 0.0)
        total += float(np.sum(np.asarray(kx) ** 2))
    return delta * total


def restricted_terms(fit: FitResult, data: MixedModelData, sigma2: float) -> dict:
    """The additive pieces of -2 log restricted likelihood."""
    t = fit.terms
    return dict(
        log_sigma=(data.n_total - data.p) * np.log(sigma2),
        logdet_a=data.m * t["logdet_a0"],
        logdet_q=t["logdet_q"],
        logdet_beta=t["logdet_cbinv"],
        quadratic=(t["rr"] + t["u_quad"] + t["x_quad"]) / sigma2,
    )


def _with_neg2(fit: FitResult, data: MixedModelData, sigma2: float) -> FitResult:
    val = float(sum(restricted_terms(fit, data, sigma2).values()))
    if not np.isfinite(val):
        raise ModelError("restricted likelihood is not finite")
    return FitResult(**{**fit.__dict__, "neg2_relik": val})


def neg2_restricted_loglik(data: MixedModelData, vp: VarianceParams, fit: FitResult | None = None,
                           quad: QuadratureSpec | None = None) -> float:
    fit = fit or gls_fit(data, vp, quad=quad)
    return float(sum(restricted_terms(fit, data, vp.sigma2).values()))


def profile_sigma2(data: MixedModelData, vp: VarianceParams, fit: FitResult | None = None) -> float:
    fit = fit or gls_fit(data, vp)
    return fit.sigma2_profile


# --- REML -----------------------------------------------------------------

G_STRUCTURES = ("full", "diagonal", "identity")
# log-parameters are clamped here; G variances below e^{-2*THETA_BOX} act as zero
THETA_BOX = 15.0


def _pack(scales: np.ndarray, g: np.ndarray, structure: str = "full") -> np.ndarray:
    q = g.shape[0]
    parts = [np.log(scales)]
    if q and structure == "full":
        chol = np.linalg.cholesky(g)
        il = np.tril_indices(q)
        vals = chol[il].copy()
        diag = il[0] == il[1]
        vals[diag] = np.log(vals[diag])
        parts.append(vals)
    elif q and structure == "diagonal":
        parts.append(0.5 * np.log(np.diag(g)))
    elif q:
        parts.append([0.5 * np.log(np.mean(np.diag(g)))])
    return np.concatenate(parts)


def _unpack(theta: np.ndarray, n_pen: int, q: int, structure: str = "full") -> tuple[np.ndarray, np.ndarray]:
    theta = np.clip(theta, -THETA_BOX, THETA_BOX)
    scales = np.exp(theta[:n_pen])
    rest = theta[n_pen:]
    if not q:
        return scales, np.zeros((0, 0))
    if structure == "diagonal":
        return scales, np.diag(np.exp(2 * rest))
    if structure == "identity":
        return scales, np.exp(2 * rest[0]) * np.eye(q)
    il = np.tril_indices(q)
    vals = rest.copy()
    diag = il[0] == il[1]
    vals[diag] = np.exp(vals[diag])
    chol = np.zeros((q, q))
    chol[il] = vals
    return scales, chol @ chol.T


class _BudgetExhausted(Exception):
    pass


@dataclass
class RemlResult:
    params: VarianceParams
    fit: FitResult
    scales: np.ndarray
    converged: bool
    n_evals: int
    trace: list


def reml_optimize(data: MixedModelData, init: VarianceParams, options: dict | None = None) -> RemlResult:
    """Minimize -2 log restricted likelihood over penalty scales and G.

    sigma2 is profiled out. Penalty operators K_l are scaled by exp(theta_l)
    relative to ``init.op``; G is parameterized by its log-Cholesky factor.
    ``options["g_structure"]`` restricts G to "diagonal" or "identity"
    (a multiple of I) instead of a full matrix. Uses Nelder-Mead; returns the
    best point even without convergence.
    """
    opts = dict(max_evals=200, tol=1e-6, step=0.5, quad=None, orders=(), g_structure="full")
    opts.update(options or {})
    structure = opts["g_structure"]
    if structure not in G_STRUCTURES:
        raise ModelError(f"g_structure must be one of {G_STRUCTURES}")
    base = init.op
    n_pen = len(base.penalties)
    q = data.q
    theta0 = _pack(np.ones(n_pen), init.G, structure)
    trace: list = []

    def evaluate(theta):
        scales, g = _unpack(theta, n_pen, q, structure)
        op = base.scaled(scales)
        fit = gls_fit(data, VarianceParams(1.0, g, op), quad=opts["quad"])
        fit = _with_neg2(fit, data, fit.sigma2_profile)
        return fit, op, g

    def objective(theta):
        try:
            val = evaluate(theta)[0].neg2_relik
        except (ModelError, OperatorError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            log.debug("evaluation failed at %s: %s", theta, exc)
            val = np.inf
        trace.append((np.array(theta, dtype=float).tolist(), float(val)))
        return val

    def budgeted(theta):
        if len(trace) >= opts["max_evals"]:
            raise _BudgetExhausted
        return objective(theta)

    if not np.isfinite(objective(theta0)):
        raise ModelError("restricted likelihood is not finite at the initial point")
    dim = len(theta0)
    simplex = np.vstack([theta0, theta0 + opts["step"] * np.eye(dim)])
    window = 5 * (dim + 1)
    history: list[float] = []
    stalled = [False]

    def stop_on_stall(intermediate_result):
        # the simplex can stall along a flat direction (a variance pinned at the
        # box edge) and never meet xatol; stop once the best value stops moving
        history.append(float(intermediate_result.fun))
        if len(history) > window and history[-window - 1] - history[-1] <= opts["tol"] * max(1.0, abs(history[-1])):
            stalled[0] = True
            raise StopIteration

    try:
        res = minimize(
            budgeted, theta0, method="Nelder-Mead", callback=stop_on_stall,
            options=dict(initial_simplex=simplex, maxfev=opts["max_evals"], xatol=opts["tol"], fatol=opts["tol"]),
        )
        converged = bool(res.success) or stalled[0]
    except _BudgetExhausted:
        converged = False
    best = min(trace, key=lambda item: item[1])
    theta_best = np.asarray(best[0])
    fit, op, g = evaluate(theta_best)
    if opts["orders"]:
        fit = gls_fit(data, VarianceParams(fit.sigma2_profile, g, op), orders=opts["orders"], quad=opts["quad"])
    vp = VarianceParams(fit.sigma2_profile, g, op)
    scales, _ = _unpack(theta_best, n_pen, q, structure)
    return RemlResult(vp, fit, scales, converged, len(trace), trace)


def lrt_report(fit_full: FitResult, fit_null: FitResult) -> tuple[float, int]:
    """Difference of -2 log restricted likelihoods and the drop in fixed-effect count."""
    stat = fit_null.neg2_relik - fit_full.neg2_relik
    if stat < -1e-6:
        raise ModelError("negative statistic; models are not nested or the fit did not converge")
    return max(stat, 0.0), len(fit_full.beta_hat) - len(fit_null.beta_hat)
