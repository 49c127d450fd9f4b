import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from hyper2 import ball

coords = st.floats(-1.0, 1.0, allow_nan=False)


def inside(d=3, radius=0.9):
    def shrink(x):
        n = np.linalg.norm(x)
        return x * (radius / n) if n > radius else x

    return arrays(np.float64, d, elements=coords).map(shrink)


def _points(rng, n, d, radius=0.9):
    x = rng.normal(size=(n, d))
    r = radius * rng.random((n, 1)) ** (1 / d)
    return x / np.linalg.norm(x, axis=1, keepdims=True) * r


# mobius_add

def test_mobius_left_identity():
    np.testing.assert_array_equal(ball.mobius_add([0.0, 0.0], [0.4, 0.0]), [0.4, 0.0])


def test_mobius_left_inverse():
    np.testing.assert_allclose(ball.mobius_add([0.3, 0.0], [-0.3, 0.0]), [0.0, 0.0], atol=1e-15)


def test_mobius_collinear_matches_extended_precision():
    expected = oracles.mobius_add(oracles._v([0.3, 0.0]), oracles._v([0.4, 0.0]))
    assert float(expected[0]) == pytest.approx(0.625, abs=1e-30)
    assert float(mp.tanh(mp.atanh(0.3) + mp.atanh(0.4))) == pytest.approx(0.625, abs=1e-15)
    np.testing.assert_allclose(ball.mobius_add([0.3, 0.0], [0.4, 0.0]), [0.625, 0.0], atol=1e-15)


def test_mobius_dimension_mismatch():
    with pytest.raises(ValueError):
        ball.mobius_add([0.1, 0.2], [0.1, 0.2, 0.3])


def test_mobius_random_against_mpmath(rng):
    for _ in range(50):
        x, y = _points(rng, 2, 5)
        k = float(rng.uniform(0.5, 2.0))
        x, y = x / np.sqrt(k), y / np.sqrt(k)
        got = ball.mobius_add(x, y, k)
        want = [float(c) for c in oracles.mobius_add(oracles._v(x), oracles._v(y), k)]
        np.testing.assert_allclose(got, want, atol=1e-13)


# exp / log

def test_exp_zero_vector_is_identity():
    np.testing.assert_array_equal(ball.exp_map([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0])
    x = np.array([0.2, -0.4])
    np.testing.assert_array_equal(ball.exp_map(x, np.zeros(2)), x)


def test_exp_at_origin_closed_form():
    np.testing.assert_allclose(ball.exp_map([0.0, 0.0], [math.atanh(0.5), 0.0]), [0.5, 0.0], atol=1e-15)


def test_log_at_origin_closed_form():
    np.testing.assert_array_equal(ball.log_map([0.0, 0.0], [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(ball.log_map([0.0, 0.0], [0.5, 0.0]), [math.atanh(0.5), 0.0], atol=1e-15)
    assert math.atanh(0.5) == pytest.approx(0.5493, abs=1e-4)


def test_log_same_point_is_zero():
    x = np.array([0.3, 0.1, -0.2])
    np.testing.assert_array_equal(ball.log_map(x, x), np.zeros(3))


def test_origin_maps_agree_with_general_maps(rng):
    v = rng.normal(size=(20, 4)) * 0.5
    zero = np.zeros(4)
    np.testing.assert_allclose(ball.expmap0(v), ball.exp_map(zero, v), atol=1e-14)
    y = _points(rng, 20, 4)
    np.testing.assert_allclose(ball.logmap0(y), ball.log_map(zero, y), atol=1e-14)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_exp_log_round_trips(rng, k):
    d = 4
    for _ in range(200):
        x = _points(rng, 1, d, 0.6)[0] / np.sqrt(k)
        y = _points(rng, 1, d, 0.9)[0] / np.sqrt(k)
        v = ball.log_map(x, y, k)
        assert np.linalg.norm(ball.exp_map(x, v, k) - y) < 1e-9
        assert np.linalg.norm(ball.log_map(x, ball.exp_map(x, v, k), k) - v) < 1e-9


# matvec

def test_matvec_identity_and_zero(rng):
    x = _points(rng, 10, 3)
    np.testing.assert_allclose(ball.mobius_matvec_diag(np.ones(3), x), x, atol=1e-12)
    np.testing.assert_array_equal(ball.mobius_matvec_diag(np.zeros(3), x), np.zeros((10, 3)))


def test_matvec_one_dimensional_closed_form():
    want = math.tanh(2 * math.atanh(0.3))
    got = ball.mobius_matvec_diag([2.0, 1.0], [0.3, 0.0])
    np.testing.assert_allclose(got, [want, 0.0], atol=1e-15)
    assert want == pytest.approx(0.5505, abs=1e-4)


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        ball.mobius_matvec_diag([1.0, 1.0, 1.0], [0.1, 0.2])


# distance

def test_distance_closed_forms():
    assert ball.distance([0.2, 0.1], [0.2, 0.1]) < 1e-12
    assert ball.distance([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert ball.distance([0.0, 0.0], [0.5, 0.0]) == pytest.approx(2 * math.atanh(0.5), abs=1e-15)
    assert 2 * math.atanh(0.5) == pytest.approx(1.0986, abs=1e-4)


@given(inside(), inside())
@settings(max_examples=200, deadline=None)
def test_distance_symmetric(x, y):
    assert abs(ball.distance(x, y) - ball.distance(y, x)) < 1e-10


@given(inside(), inside(), inside())
@settings(max_examples=200, deadline=None)
def test_distance_triangle(x, y, z):
    assert ball.distance(x, z) <= ball.distance(x, y) + ball.distance(y, z) + 1e-9


def test_distance_matches_mpmath(rng):
    for _ in range(50):
        x, y = _points(rng, 2, 4)
        want = float(oracles.distance(oracles._v(x), oracles._v(y)))
        assert ball.distance(x, y) == pytest.approx(want, rel=1e-10, abs=1e-12)


# conformal factor and projection

def test_conformal_factor_values():
    assert ball.conformal_factor([0.0, 0.0])[0] == 2.0
    assert ball.conformal_factor([0.5, 0.0])[0] == pytest.approx(8 / 3, abs=1e-15)


def test_conformal_factor_monotone():
    r = np.linspace(0, 0.99, 100)
    lam = ball.conformal_factor(np.stack([r, np.zeros_like(r)], axis=1))[:, 0]
    assert np.all(np.diff(lam) > 0) and lam.min() >= 2


def test_project_inside_unchanged(rng):
    x = _points(rng, 20, 3, 0.9)
    np.testing.assert_array_equal(ball.project_to_ball(x), x)


def test_project_forced_rescale():
    np.testing.assert_allclose(ball.project_to_ball([2.0, 0.0]), [0.99999, 0.0], atol=1e-15)


def test_project_rejects_non_finite():
    with pytest.raises(ValueError):
        ball.project_to_ball([np.nan, 0.0])
    with pytest.raises(ValueError):
        ball.project_to_ball([np.inf, 0.0])


@given(arrays(np.float64, 4, elements=st.floats(-1e6, 1e6)), st.sampled_from([0.25, 1.0, 4.0]))
@settings(max_examples=200, deadline=None)
def test_project_postcondition(x, k):
    y = ball.project_to_ball(x, k)
    assert k * np.sum(y * y) <= (1 - ball.BALL_EPS) ** 2 * (1 + 1e-12)


def test_outputs_respect_ball_bound(rng):
    x = _points(rng, 100, 3, 0.99999)
    y = _points(rng, 100, 3, 0.99999)
    bound = (1 - ball.BALL_EPS) ** 2 * (1 + 1e-12)
    for out in (ball.mobius_add(x, y), ball.expmap0(rng.normal(size=(100, 3)) * 50),
                ball.exp_map(x, rng.normal(size=(100, 3)) * 50)):
        assert np.all(np.sum(out * out, axis=1) <= bound)
