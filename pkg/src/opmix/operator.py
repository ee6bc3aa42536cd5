"""Constant-coefficient differential operators and their spectral factorization.

An operator is specified by penalty operators K_l = sum_j c_lj d^j and the
boundary-condition selectors at both endpoints. The self-adjoint square
L = sum_l K_l^dagger K_l is expanded into its coefficients alpha_0..alpha_2k.
``factorize`` then splits the roots of the characteristic polynomial of
v I + delta L into decaying and growing halves and precomputes the boundary
products used by the Green's function and the linear-time solver.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

DISTINCT_TOL = 1e-8
IMAG_AXIS_TOL = 1e-12


class OperatorError(ValueError):
    pass


def adjoint_square(penalty_ops) -> np.ndarray:
    """Coefficients of L = sum_l K_l^dagger K_l.

    Uses (c d^j)^dagger = (-1)^j c d^j for constant c, so the coefficient of
    d^m is sum_l sum_{i+j=m} (-1)^i c_li c_lj.
    """
    ops = [np.atleast_1d(np.asarray(c, dtype=float)) for c in penalty_ops]
    if not ops:
        raise OperatorError("at least one penalty operator is required")
    orders = []
    for c in ops:
        nz = np.flatnonzero(c)
        orders.append(int(nz[-1]) if nz.size else -1)
    k = max(orders)
    if k < 1:
        raise OperatorError("penalty operators of order 0 measure no roughness")
    alpha = np.zeros(2 * k + 1)
    for c in ops:
        signed = c * (-1.0) ** np.arange(len(c))
        full = np.convolve(signed, c)
        alpha[: len(full)] += full[: 2 * k + 1]
    return alpha


def allowed_selectors(k: int, i: int) -> tuple[int, int]:
    """Admissible derivative orders for the i-th (1-based) boundary condition."""
    return (i - 1, 2 * k - i)


def normalize_bc(orders, k: int, end: str = "a") -> tuple[int, ...]:
    """Place derivative orders into their slots i = 1..k.

    Each order d fills slot d + 1 when d < k and slot 2k - d otherwise; every
    slot must be filled exactly once.
    """
    orders = [int(d) for d in orders]
    if len(orders) != k:
        raise OperatorError(f"need {k} boundary conditions at {end}, got {len(orders)}")
    if len(set(orders)) != k:
        raise OperatorError(f"duplicate boundary conditions at {end}: {orders}")
    slots: list[int | None] = [None] * k
    for d in orders:
        if not 0 <= d <= 2 * k - 1:
            raise OperatorError(f"derivative order {d} not allowed at {end} for k={k}")
        i = d + 1 if d < k else 2 * k - d
        if slots[i - 1] is not None:
            raise OperatorError(
                f"boundary conditions {slots[i - 1]} and {d} at {end} both occupy slot {i}"
            )
        slots[i - 1] = d
    return tuple(slots)  # type: ignore[arg-type]


def parse_bc(text: str) -> tuple[str, int]:
    """Parse strings like ``theta(a)=0``, ``theta'(b)=0`` or ``theta^(2)(a)=0``."""
    m = re.match(r"^\s*theta(\^\((\d+)\)|'*)\s*\(\s*([ab])\s*\)\s*=\s*0\s*$", text)
    if not m:
        raise OperatorError(f"cannot parse boundary condition {text!r}")
    order = int(m.group(2)) if m.group(2) is not None else len(m.group(1))
    return m.group(3), order


@dataclass(frozen=True)
class OperatorSpec:
    penalties: tuple
    bc_a: tuple[int, ...]
    bc_b: tuple[int, ...]
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pens = tuple(tuple(float(x) for x in np.atleast_1d(c)) for c in self.penalties)
        alpha = adjoint_square(pens)
        k = (len(alpha) - 1) // 2
        object.__setattr__(self, "penalties", pens)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "bc_a", normalize_bc(self.bc_a, k, "a"))
        object.__setattr__(self, "bc_b", normalize_bc(self.bc_b, k, "b"))
        if not (-1) ** k * self.tau > 0:
            raise OperatorError("leading coefficient has the wrong sign")

    @property
    def k(self) -> int:
        return (len(self.alpha) - 1) // 2

    @property
    def tau(self) -> float:
        """Leading coefficient alpha_2k of L (sign (-1)^k)."""
        return float(self.alpha[-1])

    def scaled(self, factors) -> "OperatorSpec":
        """Multiply each penalty operator K_l by ``factors[l]``."""
        factors = np.broadcast_to(np.asarray(factors, dtype=float), (len(self.penalties),))
        pens = tuple(tuple(f * x for x in c) for f, c in zip(factors, self.penalties))
        return OperatorSpec(pens, self.bc_a, self.bc_b)

    @classmethod
    def brownian(cls, lam: float = 1.0, kind: str = "motion") -> "OperatorSpec":
        """K = lam * d with theta(a)=0 and theta'(b)=0 (motion) or theta(b)=0 (bridge)."""
        if kind == "motion":
            return cls(((0.0, lam),), (0,), (1,))
        if kind == "bridge":
            return cls(((0.0, lam),), (0,), (0,))
        raise OperatorError(f"unknown Brownian kind {kind!r}")

    @classmethod
    def from_strings(cls, penalties, conditions) -> "OperatorSpec":
        a_orders, b_orders = [], []
        for text in conditions:
            end, order = parse_bc(text)
            (a_orders if end == "a" else b_orders).append(order)
        return cls(tuple(penalties), tuple(a_orders), tuple(b_orders))

    def bc_strings(self) -> list[str]:
        out = []
        for end, orders in (("a", self.bc_a), ("b", self.bc_b)):
            for d in orders:
                out.append(f"theta{chr(39) * d}({end})=0" if d <= 3 else f"theta^({d})({end})=0")
        return out

    def star_coefficients(self, v: float, delta: float) -> np.ndarray:
        """Coefficients of v I + delta L."""
        out = delta * self.alpha
        out[0] += v
        return out


def companion(alpha_star) -> np.ndarray:
    """Companion matrix whose last row is -alpha_j / alpha_2k."""
    alpha_star = np.asarray(alpha_star, dtype=float)
    lead = alpha_star[-1]
    if lead == 0:
        raise OperatorError("leading coefficient is zero")
    d = len(alpha_star) - 1
    c = np.zeros((d, d))
    c[np.arange(d - 1), np.arange(1, d)] = 1.0
    c[-1, :] = -alpha_star[:-1] / lead
    return c


def _split_roots(roots: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Sort a batch of 2k roots into (decaying, growing) halves.

    roots has shape (nb, 2k).
    """
    scale = np.max(np.abs(roots), axis=-1, keepdims=True)
    if np.any(scale == 0):
        raise OperatorError("characteristic polynomial has a zero root")
    if np.any(np.abs(roots.real) <= IMAG_AXIS_TOL * scale):
        raise OperatorError("root on the imaginary axis; cannot split into decaying/growing halves")
    diff = np.abs(roots[:, :, None] - roots[:, None, :])
    diff[:, np.arange(2 * k), np.arange(2 * k)] = np.inf
    if np.any(diff.min(axis=(1, 2)) < DISTINCT_TOL * scale[:, 0]):
        raise OperatorError("repeated roots; distinct-roots assumption fails")
    n_neg = np.sum(roots.real < 0, axis=-1)
    if np.any(n_neg != k):
        raise OperatorError(f"root split is not {k}/{k}")
    # deterministic order within each half: real part, then imaginary part
    order = np.lexsort((roots.imag, roots.real), axis=-1)
    srt = np.take_along_axis(roots, order, axis=-1)
    return srt[:, :k], srt[:, k:]


def _vandermonde(eta: np.ndarray, rows: int) -> np.ndarray:
    """(nb, rows, k) matrix with entries eta_i^r."""
    return eta[:, None, :] ** np.arange(rows)[None, :, None]


def _last_unit_solution(eta_all: np.ndarray) -> np.ndarray:
    """Solve W c = e_2k for the Vandermonde W of distinct nodes.

    The solution is c_i = 1 / prod_{j != i} (eta_i - eta_j).
    """
    d = eta_all.shape[-1]
    diff = eta_all[:, :, None] - eta_all[:, None, :]
    diff[:, np.arange(d), np.arange(d)] = 1.0
    return 1.0 / np.prod(diff, axis=-1)


def spectral_arrays(alpha_star: np.ndarray, bc_a, bc_b, a: float, b: float) -> dict:
    """Batched factorization for alpha_star of shape (nb, 2k + 1)."""
    alpha_star = np.atleast_2d(np.asarray(alpha_star, dtype=float))
    nb, d1 = alpha_star.shape
    k = (d1 - 1) // 2
    if np.any(alpha_star[:, -1] == 0):
        raise OperatorError("leading coefficient is zero")
    comp = np.zeros((nb, 2 * k, 2 * k))
    comp[:, np.arange(2 * k - 1), np.arange(1, 2 * k)] = 1.0
    comp[:, -1, :] = -alpha_star[:, :-1] / alpha_star[:, -1:]
    roots = np.linalg.eigvals(comp).astype(complex)
    em, ep = _split_roots(roots, k)
    wm = _vandermonde(em, 2 * k)
    wp = _vandermonde(ep, 2 * k)
    vv = _last_unit_solution(np.concatenate([em, ep], axis=-1))
    vm, vp = vv[:, :k], vv[:, k:]
    ia = np.asarray(bc_a)
    ib = np.asarray(bc_b)
    fa_wm, fa_wp = wm[:, ia, :], wp[:, ia, :]
    fb_wm, fb_wp = wm[:, ib, :], wp[:, ib, :]
    for mat, name in ((fa_wm, "F_a W_-"), (fb_wp, "F_b W_+")):
        cond = np.linalg.cond(mat)
        if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
            raise OperatorError(f"{name} is singular; boundary conditions are not admissible")
    pa = np.linalg.solve(fa_wm, fa_wp)
    pb = np.linalg.solve(fb_wp, fb_wm)
    length = b - a
    ep_ba = np.exp(-length * ep)
    em_ba = np.exp(length * em)
    # P_a e^{-(b-a)J+} P_b
    core = pa * ep_ba[:, None, :] @ pb
    inner = np.eye(k) - em_ba[:, :, None] * core
    bmat = core @ np.linalg.inv(inner)
    return dict(
        eta_minus=em, eta_plus=ep, Wm=wm, Wp=wp, vm=vm, vp=vp,
        FaWm_inv_FaWp=pa, FbWp_inv_FbWm=pb, B=bmat, lead=alpha_star[:, -1],
    )


def selection_matrix(bc, k: int) -> np.ndarray:
    f = np.zeros((k, 2 * k))
    f[np.arange(k), np.asarray(bc)] = 1.0
    return f


@dataclass(frozen=True)
class SpectralFactorization:
    """Root split and boundary products for v I + delta L on [a, b]."""

    op: OperatorSpec
    v: float
    delta: float
    a: float
    b: float
    eta_minus: np.ndarray
    eta_plus: np.ndarray
    Wm: np.ndarray = field(repr=False)
    Wp: np.ndarray = field(repr=False)
    vm: np.ndarray = field(repr=False)
    vp: np.ndarray = field(repr=False)
    FaWm_inv_FaWp: np.ndarray = field(repr=False)
    FbWp_inv_FbWm: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.op.k

    @property
    def lead(self) -> float:
        """Leading coefficient of v I + delta L."""
        return self.delta * self.op.tau

    @property
    def Fa(self) -> np.ndarray:
        return selection_matrix(self.op.bc_a, self.k)

    @property
    def Fb(self) -> np.ndarray:
        return selection_matrix(self.op.bc_b, self.k)

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.eta_minus, self.eta_plus])

    @property
    def alpha_star(self) -> np.ndarray:
        return self.op.star_coefficients(self.v, self.delta)


def factorize(op: OperatorSpec, v: float, delta: float, a: float = 0.0,
              b: float = 1.0) -> SpectralFactorization:
    if not 0.0 <= v <= 1.0:
        raise OperatorError(f"v must lie in [0, 1], got {v}")
    if not delta > 0:
        raise OperatorError(f"delta must be positive, got {delta}")
    if not b > a:
        raise OperatorError("need b > a")
    alpha_star = op.star_coefficients(v, delta)
    arr = spectral_arrays(alpha_star[None, :], op.bc_a, op.bc_b, a, b)
    return SpectralFactorization(
        op=op, v=float(v), delta=float(delta), a=float(a), b=float(b),
        **{key: val[0] for key, val in arr.items() if key != "lead"},
    )
