import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opmix.grid import EmbeddedFunction, GridError, embed_eval, make_grid, multiplication_weights, weighted_sum_identity_check


def test_equidistant_points_and_weights():
    g = make_grid(0, 1, 4)
    np.testing.assert_allclose(g.points, [0.125, 0.375, 0.625, 0.875], rtol=0, atol=1e-15)
    assert g.equidistant and g.mesh == 0.25
    np.testing.assert_array_equal(g.mu, [4, 4, 4, 4])


def test_explicit_points_weights():
    g = make_grid(0, 1, points=[0.2, 0.5, 0.6])
    assert not g.equidistant
    np.testing.assert_allclose(g.mu, [2 / 0.7, 2 / 0.4, 2 / 0.9], rtol=1e-12)


def test_equidistant_detection_from_points():
    g = make_grid(0, 2, points=[0.25, 0.75, 1.25, 1.75])
    assert g.equidistant and g.mesh == 0.5


@pytest.mark.parametrize("kwargs", [dict(n=1), dict(points=[0.5]), dict(points=[0.3, 0.2]),
                                    dict(points=[0.0, 0.5]), dict(points=[0.5, 2.0])])
def test_invalid_grids(kwargs):
    with pytest.raises(GridError):
        make_grid(0, 2, **kwargs)


def test_reversed_interval_rejected():
    with pytest.raises(GridError):
        make_grid(1, 0, 4)


def test_embed_eval_examples():
    e = EmbeddedFunction(make_grid(0, 1, 2), np.array([1.0, 3.0]))
    assert e(0.5) == 2.0
    assert e(0.0) == 1.0 and e(1.0) == 3.0
    const = EmbeddedFunction(make_grid(0, 1, 4), np.full(4, 5.0))
    np.testing.assert_array_equal(const(np.linspace(0, 1, 11)), 5.0)


def test_embed_eval_outside_is_error():
    e = EmbeddedFunction(make_grid(0, 1, 3), np.ones(3))
    with pytest.raises(GridError):
        embed_eval(e, 1.5)


def test_weighted_sum_identity_examples():
    g = make_grid(0, 1, 4)
    assert weighted_sum_identity_check(g, [1, 2, 3, 4]) == pytest.approx(10, abs=1e-13)
    assert weighted_sum_identity_check(g, np.zeros(4)) == 0
    assert weighted_sum_identity_check(make_grid(0, 1, 7), np.full(7, 2.5)) == pytest.approx(17.5, abs=1e-13)


def test_weighted_sum_identity_needs_equidistant():
    with pytest.raises(GridError):
        weighted_sum_identity_check(make_grid(0, 1, points=[0.2, 0.5, 0.6]), [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 200), a=st.floats(-5, 5), length=st.floats(0.1, 10),
       seed=st.integers(0, 2**31 - 1))
def test_grid_invariants(n, a, length, seed):
    b = a + length
    g = make_grid(a, b, n)
    assert np.all(np.diff(g.points) > 0) and g.points[0] > a and g.points[-1] < b
    np.testing.assert_allclose(np.sum(1 / g.mu), b - a, rtol=1e-12)
    np.testing.assert_allclose(multiplication_weights(a, b, g.points), g.mu, rtol=1e-9)
    z = np.random.default_rng(seed).standard_normal(n)
    e = EmbeddedFunction(g, z)
    assert np.max(np.abs(e(g.points) - z)) == 0
    assert weighted_sum_identity_check(g, z) == pytest.approx(np.sum(z), abs=1e-9 * (1 + np.sum(np.abs(z))))


def test_embedding_is_linear_between_points():
    g = make_grid(0, 1, points=[0.1, 0.4, 0.9])
    e = EmbeddedFunction(g, np.array([1.0, -2.0, 4.0]))
    assert e(0.25) == pytest.approx(-0.5)
    assert e(0.65) == pytest.approx(1.0)
    assert e(0.05) == 1.0 and e(0.95) == 4.0
