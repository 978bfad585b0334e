import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gazeattn.tensor import (ShapeError, affine, affine_backward, dropout_mask, elementwise,
                             elementwise_backward, softmax, softmax_backward)

finite = st.floats(-50, 50, allow_nan=False)


def test_affine_identity():
    np.testing.assert_array_equal(affine(np.eye(3), np.zeros(3), [1, 2, 3]), [1, 2, 3])


def test_affine_zero_weights_return_bias():
    np.testing.assert_array_equal(affine(np.zeros((2, 3)), [5, -1], [7, 8, 9]), [5, -1])


def test_affine_hand_multiplication():
    np.testing.assert_array_equal(affine([[1, 2], [3, 4]], [1, 1], [1, 1]), [4, 8])


def test_affine_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        affine(np.zeros((2, 3)), np.zeros(2), np.zeros(2))


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, 4, elements=finite),
       arrays(np.float64, 4, elements=finite))
def test_affine_is_linear(W, x, y):
    b = np.zeros(3)
    np.testing.assert_allclose(affine(W, b, x + y), affine(W, b, x) + affine(W, b, y), atol=1e-9)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax(np.zeros(4)), [0.25] * 4)


def test_softmax_no_overflow():
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_reference_values():
    # 30-digit mpmath evaluation of exp(i) / sum exp(j)
    np.testing.assert_allclose(softmax([1, 2, 3]), [0.09003057, 0.24472847, 0.66524096], atol=1e-5)


def test_softmax_empty():
    with pytest.raises(ShapeError):
        softmax([])


def test_softmax_sums_to_one_on_random_inputs(rng):
    for _ in range(1000):
        v = rng.uniform(-50, 50, size=rng.integers(1, 60))
        p = softmax(v)
        assert abs(p.sum() - 1.0) < 1e-9
        # a 100-wide logit spread rounds the top entry to exactly 1.0 in float64
        assert np.all(p > 0) and np.all(p <= 1)


def test_softmax_entries_strictly_inside_unit_interval(rng):
    for _ in range(200):
        p = softmax(rng.uniform(-5, 5, size=rng.integers(2, 60)))
        assert np.all((p > 0) & (p < 1))


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.floats(-100, 100))
def test_softmax_shift_invariant(v, c):
    np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-9)


def test_elementwise_values():
    assert elementwise("sigmoid", np.array([0.0]))[0] == 0.5
    assert elementwise("tanh", np.array([0.0]))[0] == 0.0
    assert elementwise("sigmoid", np.array([1.0]))[0] == pytest.approx(0.7310586, abs=1e-6)


def test_sigmoid_extremes_stay_finite():
    out = elementwise("sigmoid", np.array([-1000.0, 1000.0]))
    np.testing.assert_array_equal(out, [0.0, 1.0])


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-30, 30)))
def test_elementwise_ranges(v):
    s = elementwise("sigmoid", v)
    t = elementwise("tanh", v)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))


def test_dropout_rate_zero_is_identity(rng):
    np.testing.assert_array_equal(dropout_mask(0.0, 10, rng), np.ones(10))


def test_dropout_kept_fraction(rng):
    mask = dropout_mask(0.5, 100_000, rng)
    assert abs(np.mean(mask > 0) - 0.5) < 0.01
    assert set(np.unique(mask)) <= {0.0, 2.0}


def test_dropout_deterministic():
    a = dropout_mask(0.3, 50, np.random.default_rng(9))
    b = dropout_mask(0.3, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
def test_dropout_bad_rate(rate, rng):
    with pytest.raises(ValueError):
        dropout_mask(rate, 3, rng)


def _fd_jvp(f, x, v, eps=1e-5):
    return (f(x + eps * v) - f(x - eps * v)) / (2 * eps)


def _rel(a, b):
    return abs(a - b) / max(1e-12, abs(a) + abs(b))


@pytest.mark.parametrize("trial", range(10))
def test_backward_rules_match_finite_differences(trial):
    # <u, J v> from central differences against <J^T u, v> from the analytic VJP
    rng = np.random.default_rng(trial)
    n, m = rng.integers(1, 17, size=2)
    W, b, x = rng.normal(size=(m, n)), rng.normal(size=m), rng.normal(size=n)
    u = rng.normal(size=m)
    dW, db, dx = affine_backward(W, x, u)
    vx = rng.normal(size=n)
    assert _rel(u @ _fd_jvp(lambda z: affine(W, b, z), x, vx), dx @ vx) < 1e-4
    vW = rng.normal(size=(m, n))
    assert _rel(u @ _fd_jvp(lambda Z: affine(Z, b, x), W, vW), np.sum(dW * vW)) < 1e-4

    z = rng.normal(size=n) * 3
    uz, vz = rng.normal(size=n), rng.normal(size=n)
    p = softmax(z)
    assert _rel(uz @ _fd_jvp(softmax, z, vz), softmax_backward(p, uz) @ vz) < 1e-4
    for kind in ("sigmoid", "tanh"):
        y = elementwise(kind, z)
        jvp = _fd_jvp(lambda a: elementwise(kind, a), z, vz)
        assert _rel(uz @ jvp, elementwise_backward(kind, y, uz) @ vz) < 1e-4
