import numpy as np
import pytest

from opmix.grid import make_grid
from opmix.mixed_model import MixedModelData, VarianceParams
from opmix.operator import OperatorSpec
from opmix.oracle import (DenseModel, OracleError, build_R0, dense_for_operator, logdet_integral,
                          logdet_integral_direct, oracle_fit, oracle_neg2relik)

from helpers import brownian_data

OP = OperatorSpec.brownian(0.7)


def test_build_r0_examples():
    grid = make_grid(0, 1, 2)
    np.testing.assert_allclose(build_R0("motion", grid).R0, [[0.25, 0.25], [0.25, 0.75]])
    np.testing.assert_allclose(build_R0("bridge", grid).R0, [[0.1875, 0.0625], [0.0625, 0.1875]])
    with pytest.raises(OracleError):
        build_R0("fractional", grid)


def test_generic_kernel_reproduces_brownian_limit():
    # lam*d with a tiny zeroth-order term approaches the Brownian motion kernel
    op = OperatorSpec(((1e-4, 1.0),), (0,), (1,))
    grid = make_grid(0, 1, 10)
    np.testing.assert_allclose(build_R0("generic", grid, op=op).R0, build_R0("motion", grid).R0, atol=1e-6)


def test_dense_for_operator_dispatch():
    grid = make_grid(0, 1, 8)
    np.testing.assert_array_equal(dense_for_operator(OperatorSpec.brownian(2.0), grid).R0, build_R0("motion", grid, 2.0).R0)
    np.testing.assert_array_equal(dense_for_operator(OperatorSpec.brownian(2.0, "bridge"), grid).R0,
                                  build_R0("bridge", grid, 2.0).R0)


def test_r0_positive_definite():
    for n in (5, 50, 200):
        grid = make_grid(0, 3, n)
        for kind in ("motion", "bridge"):
            assert np.min(np.diag(np.linalg.cholesky(build_R0(kind, grid, 0.8).R0))) > 0


def test_pure_smoother_reduction(rng):
    grid = make_grid(0, 1, 25)
    y = rng.standard_normal((25, 2))
    dense = build_R0("motion", grid, 0.7)
    fit = oracle_fit(MixedModelData(grid, y), VarianceParams(1.0, np.zeros((0, 0)), OP), dense)
    np.testing.assert_allclose(fit.x_blup, dense.R0 @ np.linalg.solve(dense.A0, y), atol=1e-12)


def test_bridge_time_reversal(rng):
    grid = make_grid(0, 1, 30)
    y = rng.standard_normal((30, 2))
    dense = build_R0("bridge", grid, 0.9)
    params = VarianceParams(1.0, np.zeros((0, 0)), OperatorSpec.brownian(0.9, "bridge"))
    f = oracle_fit(MixedModelData(grid, y), params, dense)
    r = oracle_fit(MixedModelData(grid, y[::-1]), params, dense)
    np.testing.assert_allclose(r.x_blup, f.x_blup[::-1], atol=1e-12)


def test_henderson_equations_agree(rng):
    """Marginal-covariance fit equals the solution of the joint mixed-model equations."""
    data = brownian_data(20, m=2)
    g = np.array([[0.5]])
    dense = build_R0("motion", data.grid, 0.7)
    fit = oracle_fit(data, VarianceParams(1.0, g, OP), dense)
    p, q, nt = data.p, data.q, data.n_total
    r_inv = np.kron(np.eye(data.m), np.linalg.inv(dense.R0))
    gam, z = data.Gamma, data.Z
    lhs = np.block([
        [gam.T @ gam, gam.T @ z, gam.T],
        [z.T @ gam, z.T @ z + np.linalg.inv(g), z.T],
        [gam, z, np.eye(nt) + r_inv],
    ])
    y = data.y.T.ravel()
    sol = np.linalg.solve(lhs, np.concatenate([gam.T @ y, z.T @ y, y]))
    np.testing.assert_allclose(fit.beta_hat, sol[:p], atol=1e-9)
    np.testing.assert_allclose(fit.u_blup, sol[p:p + q], atol=1e-9)
    np.testing.assert_allclose(fit.x_blup, sol[p + q:].reshape(data.m, data.n).T, atol=1e-9)


def test_logdet_identity_random_spd(rng):
    a = rng.standard_normal((30, 30))
    r0 = a @ a.T / 30 + 0.1 * np.eye(30)
    exact = DenseModel.from_matrix(r0).logdet_A0()
    assert abs(logdet_integral(r0) - exact) <= 1e-6
    assert abs(logdet_integral_direct(r0) - exact) <= 1e-6


def test_logdet_identity_brownian():
    dense = build_R0("motion", make_grid(0, 1, 30), 0.7)
    assert abs(logdet_integral(dense.R0) - dense.logdet_A0()) <= 1e-6


def test_rank_one_log_det():
    r0 = 0.5 * np.ones((10, 10))
    assert DenseModel.from_matrix(r0).logdet_A0() == pytest.approx(np.log(6.0), abs=1e-12)
    assert DenseModel.from_matrix(1e-12 * np.ones((10, 10))).logdet_A0() == pytest.approx(0, abs=1e-10)


def test_oracle_profile_minimum():
    data = brownian_data(30)
    dense = build_R0("motion", data.grid, 0.7)
    g = np.array([[0.5]])
    s2 = oracle_fit(data, VarianceParams(1.0, g, OP), dense).sigma2_profile
    base = oracle_neg2relik(data, VarianceParams(s2, g, OP), dense)
    for f in (0.5, 0.9, 0.999, 1.001, 1.1, 2.0):
        assert oracle_neg2relik(data, VarianceParams(s2 * f, g, OP), dense) > base


def test_size_guard():
    grid = make_grid(0, 1, 2600)
    data = MixedModelData(grid, np.zeros((2600, 2)))
    dense = DenseModel(np.zeros((2600, 2600)), np.eye(2600), np.eye(2600))
    with pytest.raises(OracleError):
        oracle_fit(data, VarianceParams(1.0, np.zeros((0, 0)), OP), dense)


def test_rejects_bad_matrices():
    with pytest.raises(OracleError):
        DenseModel.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(OracleError):
        DenseModel.from_matrix(-3 * np.eye(2))
    with pytest.raises(OracleError):
        logdet_integral(-np.eye(2))
