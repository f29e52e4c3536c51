import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mffnet import tensor as T
from mffnet.tensor import Tensor, backward, grad_check, no_grad

from conftest import randt

finite = st.floats(-5, 5, allow_nan=False, width=64)


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- forward examples ------------------------------------------------------

def test_matmul_examples():
    x = t([[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(t(np.eye(2)), x).data, x.data)
    np.testing.assert_array_equal(T.matmul(t([[1, 2]]), t([[3], [4]])).data, [[11]])
    np.testing.assert_array_equal(T.matmul(t(np.zeros((2, 2))), x).data, np.zeros((2, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(t([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(t([1.0, 1.0, 1.0])).data, [1 / 3] * 3)
    np.testing.assert_allclose(T.softmax(t([0.0, math.log(3)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_is_stable_for_large_inputs():
    out = T.softmax(t([1000.0, 1000.0, -1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0])


def test_layer_norm_examples():
    ones, zeros = t([1.0, 1.0]), t([0.0, 0.0])
    np.testing.assert_allclose(T.layer_norm(t([[1.0, 3.0]]), ones, zeros, eps=0.0).data, [[-1, 1]])
    out = T.layer_norm(t([[2.0, 2.0, 2.0]]), t([1.0] * 3), t([0.0] * 3)).data
    np.testing.assert_array_equal(out, np.zeros((1, 3)))
    beta = t([0.3, -0.7, 1.1])
    out = T.layer_norm(t([[1.0, 5.0, 2.0]]), t([0.0] * 3), beta).data
    np.testing.assert_array_equal(out, beta.data[None])


def test_layer_norm_normalizes_rows(rng):
    x = t(rng.standard_normal((5, 7)) * 3 + 2)
    out = T.layer_norm(x, t(np.ones(7)), t(np.zeros(7)), eps=1e-5).data
    assert np.all(np.abs(out.mean(-1)) < 1e-6)
    assert np.all(np.abs(out.var(-1) - 1) < 1e-4)


def test_concat_examples():
    np.testing.assert_array_equal(T.concat([t([[1.0]]), t([[2.0]])], axis=1).data, [[1, 2]])
    x = t([[1.0, 2.0]])
    np.testing.assert_array_equal(T.concat([x, t(np.zeros((1, 0)))], axis=1).data, x.data)
    blocks = [t(np.full((2, 2), k)) for k in (1.0, 2.0, 3.0)]
    out = T.concat(blocks, axis=1).data
    assert out.shape == (2, 6)
    np.testing.assert_array_equal(out[0], [1, 1, 2, 2, 3, 3])


def test_pointwise_scale_examples():
    x = t([[1.0, 1.0], [4.0, 4.0]])
    np.testing.assert_array_equal(T.pointwise_scale(t([1.0, 1.0]), x).data, x.data)
    np.testing.assert_array_equal(T.pointwise_scale(t([0.0, 0.0]), x).data, np.zeros((2, 2)))
    np.testing.assert_array_equal(T.pointwise_scale(t([2.0, 0.5]), x).data, [[2, 2], [2, 2]])


def test_mean_pool_examples():
    np.testing.assert_array_equal(T.mean_pool(t([[1.0, 2.0]])).data, [1, 2])
    np.testing.assert_array_equal(T.mean_pool(t([[1.0, 2.0], [3.0, 4.0]])).data, [2, 3])
    np.testing.assert_array_equal(T.mean_pool(t([[5.0, 6.0]] * 4)).data, [5, 6])


def test_elementwise_examples():
    np.testing.assert_array_equal(T.relu(t([-1.0, 2.0])).data, [0, 2])
    assert T.sigmoid(t(0.0)).item() == 0.5
    np.testing.assert_array_equal(T.sum_axis(t([[1.0, 0.0], [2.0, 3.0]]), axis=-1).data, [1, 5])


def test_sigmoid_extremes_are_finite():
    out = T.sigmoid(t([-800.0, 800.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_python_scalars_keep_float32():
    x = Tensor(np.ones(3, dtype=np.float32))
    assert (x * 2.0 + 1.0 - 0.5).dtype == np.float32
    assert (1.0 - x).dtype == np.float32


# -- backward --------------------------------------------------------------

def test_backward_sum_gives_ones(rng):
    x = randt(rng, 2, 3, 4)
    grads = backward(T.sum_axis(x))
    np.testing.assert_array_equal(grads[x], np.ones((2, 3, 4)))


def test_backward_product_rule():
    x, y = t(3.0, True), t(-2.0, True)
    backward(x * y)
    assert x.grad == -2.0 and y.grad == 3.0


def test_backward_accumulates_over_reuse():
    x = t(2.0, True)
    backward(x * x + x)  # d/dx = 2x + 1
    assert x.grad == 5.0


def test_backward_requires_scalar(rng):
    with pytest.raises(ValueError):
        backward(randt(rng, 3))


def test_no_grad_records_nothing(rng):
    x = randt(rng, 3)
    with no_grad():
        y = T.sum_axis(x * x)
    assert not y.requires_grad and y._parents == ()


def test_broadcast_gradient_is_summed(rng):
    x, b = randt(rng, 4, 3), randt(rng, 3)
    backward(T.sum_axis(x + b))
    np.testing.assert_array_equal(b.grad, np.full(3, 4.0))


# -- grad_check --------------------------------------------------------------

def test_grad_check_quadratic():
    p = t([3.0], True)
    assert grad_check(lambda: T.sum_axis(p * p), [p]) < 1e-8


def test_grad_check_constant():
    p = t([1.0, 2.0], True)
    assert grad_check(lambda: T.sum_axis(t([4.0, 5.0])), [p]) == 0.0


def test_grad_check_flags_a_wrong_gradient():
    p = t([0.7, -0.3], True)

    def bad_square(x):
        return T._make(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square")

    assert grad_check(lambda: T.sum_axis(bad_square(p)), [p]) > 0.1


@pytest.mark.parametrize("op", [
    lambda a, b: T.matmul(a, T.transpose(b)),
    lambda a, b: T.softmax(a * b, axis=-1),
    lambda a, b: T.layer_norm(a, b[0], b[1]),
    lambda a, b: T.concat([a, b], axis=0),
    lambda a, b: T.div(a, T.exp(b) + 1.0),
    lambda a, b: T.log(T.sigmoid(a)) * T.sqrt(T.exp(b)),
    lambda a, b: T.pointwise_scale(T.mean(a, axis=-1), b) + T.relu(a - 0.1),
    lambda a, b: T.mean_pool(T.swapaxes(a[None], 1, 2)) * T.clip(b[0, :3], -0.5, 0.5),
])
def test_composite_ops_match_finite_differences(op, rng):
    a, b = randt(rng, 3, 4), randt(rng, 3, 4)
    w = t(rng.standard_normal(np.shape(op(a, b).data)))
    assert grad_check(lambda: T.sum_axis(op(a, b) * w), [a, b], max_coords=None) < 1e-6


# -- properties --------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(x):
    out = T.softmax(t(x)).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite),
       st.floats(-3, 3))
def test_softmax_shift_invariant(x, shift):
    np.testing.assert_allclose(T.softmax(t(x + shift)).data, T.softmax(t(x)).data, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)), elements=finite),
       arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 3)), elements=finite))
def test_matmul_matches_numpy(a, b):
    if a.shape[1] != b.shape[0]:
        with pytest.raises(T.DimensionError):
            T.matmul(t(a), t(b))
    else:
        np.testing.assert_allclose(T.matmul(t(a), t(b)).data, a @ b)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 4)), elements=finite))
def test_sum_gradient_is_ones_any_shape(x):
    xt = t(x, True)
    backward(T.sum_axis(xt))
    np.testing.assert_array_equal(xt.grad, np.ones_like(x))


def test_relative_error_definition():
    assert T.relative_error(1.0, 1.0) == 0.0
    assert T.relative_error(0.0, 0.0) == 0.0
    np.testing.assert_allclose(T.relative_error(1.0, 3.0), 0.5)
