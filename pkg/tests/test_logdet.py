import time

import numpy as np
import pytest
from scipy.integrate import quad

from opmix.green import green_diag_stable
from opmix.grid import make_grid
from opmix.logdet import QuadratureSpec, diag_integral, logdet_approx, logdet_closed_brownian
from opmix.operator import OperatorSpec, factorize
from opmix.oracle import build_R0


def test_diag_integral_brownian_motion():
    parts = diag_integral(OperatorSpec.brownian(1.0), make_grid(0, 1, 4), 1.0)
    assert parts.total == pytest.approx(np.tanh(2.0), rel=1e-12)
    assert parts.terms.shape == (8,) and np.all(np.isfinite(parts.terms))


def test_diag_integral_brownian_bridge():
    parts = diag_integral(OperatorSpec.brownian(1.0, "bridge"), make_grid(0, 1, 4), 1.0)
    assert parts.total == pytest.approx(1 / np.tanh(2.0) - 0.5, rel=1e-12)
    assert parts.total == pytest.approx(0.537315, abs=1e-6)


def test_diag_integral_small_v():
    parts = diag_integral(OperatorSpec.brownian(1.0), make_grid(0, 1, 4), 1e-6)
    assert parts.total == pytest.approx(2.0, rel=1e-2)


@pytest.mark.parametrize("v", [0.1, 0.5, 1.0])
def test_terms_equal_quadrature_of_diagonal(v):
    op = OperatorSpec(((1.0, 0.3, 0.8), (0.0, 0.5)), (0, 2), (3, 1))
    grid = make_grid(-0.2, 1.3, 20)
    fac = factorize(op, v, grid.mesh, grid.a, grid.b)
    ref, _ = quad(lambda t: green_diag_stable(fac, t), grid.a, grid.b, epsabs=0, epsrel=1e-12, limit=200)
    assert diag_integral(op, grid, v).total == pytest.approx(ref, rel=1e-8)


def test_logdet_examples():
    grid = make_grid(0, 1, 100)
    assert logdet_approx(OperatorSpec.brownian(1.0), grid) == pytest.approx(9.3068528, abs=1e-7)
    bridge = logdet_approx(OperatorSpec.brownian(1.0, "bridge"), grid)
    assert bridge == pytest.approx(np.log(np.sinh(10.0) / 10.0), rel=1e-12)
    assert bridge == pytest.approx(7.0042677, abs=1e-7)


def test_closed_form_examples():
    assert logdet_closed_brownian("motion", 1, 0, 1, 100) == pytest.approx(np.log(np.cosh(10.0)), rel=1e-14)
    assert logdet_closed_brownian("bridge", 1, 0, 1, 100) == pytest.approx(np.log(np.sinh(10.0) / 10.0), rel=1e-14)
    assert logdet_closed_brownian("motion", 1e8, 0, 1, 100) == pytest.approx(0, abs=1e-12)
    assert np.isfinite(logdet_closed_brownian("motion", 1e-3, 0, 1, 10**6))
    with pytest.raises(ValueError):
        logdet_closed_brownian("other", 1, 0, 1, 10)


@pytest.mark.parametrize("kind", ["motion", "bridge"])
def test_generic_matches_closed_form(kind):
    for n in (10, 100, 1000, 10**4):
        for lam in (0.5, 1.0, 2.0):
            got = logdet_approx(OperatorSpec.brownian(lam, kind), make_grid(0, 1, n))
            assert got == pytest.approx(logdet_closed_brownian(kind, lam, 0, 1, n), rel=1e-6)


def test_dense_cross_check_shrinks():
    gaps = []
    for n in (30, 60, 120):
        grid = make_grid(0, 1, n)
        gaps.append(abs(logdet_approx(OperatorSpec.brownian(0.7), grid) - build_R0("motion", grid, 0.7).logdet_A0()))
    assert gaps[0] <= 0.5
    assert gaps[0] > gaps[1] > gaps[2]


def test_monotone_in_n_and_lambda():
    lams = (0.5, 1.0, 2.0)
    ns = (10, 100, 1000)
    vals = np.array([[logdet_approx(OperatorSpec.brownian(lam), make_grid(0, 1, n)) for n in ns] for lam in lams])
    assert np.all(np.diff(vals, axis=1) > 0)
    assert np.all(np.diff(vals, axis=0) < 0)


def test_runtime_independent_of_n():
    op = OperatorSpec.brownian(1.0)

    def best(n):
        grid = make_grid(0, 1, n)
        out = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            logdet_approx(op, grid)
            out = min(out, time.perf_counter() - t0)
        return out
    assert best(10**6) / best(100) <= 2


def test_quadrature_spec_rules():
    v, w = QuadratureSpec().rule(100)
    assert len(v) == 128 and np.all((v > 0) & (v < 1))
    assert np.sum(w) == pytest.approx(1.0, rel=1e-12)
    v, w = QuadratureSpec(nodes=20, split=False).rule(100)
    assert len(v) == 20 and np.sum(w) == pytest.approx(1.0)


def test_k2_logdet_positive_and_stable():
    op = OperatorSpec(((1.0, 0.0, 1.0),), (0, 1), (0, 1))
    vals = [logdet_approx(op, make_grid(0, 1, n)) for n in (50, 500, 5000)]
    assert all(np.isfinite(vals)) and all(v > 0 for v in vals)
    # against the dense log det of the Green's function kernel
    grid = make_grid(0, 1, 50)
    dense = build_R0("generic", grid, op=op)
    assert abs(vals[0] - dense.logdet_A0()) < 0.1 * dense.logdet_A0()
