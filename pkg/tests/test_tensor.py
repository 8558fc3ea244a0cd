import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimignn import tensor as T
from dimignn.tensor import (
    NonFiniteError,
    ShapeError,
    TapeError,
    Tensor,
    backward,
    finite_difference_grad,
    forward_op,
    grad_rel_error,
    no_grad,
)
from conftest import grad_errors


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = forward_op("matmul", [a, Tensor(np.eye(2))])
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_softmax_uniform():
    out = forward_op("softmax_lastdim", [Tensor([0.0, 0.0, 0.0])])
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_tanh_reference():
    assert forward_op("tanh", [Tensor(1.0)]).item() == pytest.approx(0.7615941559557649, abs=1e-7)
    assert forward_op("tanh", [Tensor(1.0)]).item() == pytest.approx(math.tanh(1.0), abs=1e-15)


def test_matmul_shape_error_names_op_and_extents():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_add_shape_error():
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError, match="log"):
        T.log(Tensor([0.0, 1.0]))
    with pytest.raises(NonFiniteError, match="exp"):
        T.exp(Tensor([1000.0]))


def test_unknown_op():
    with pytest.raises(ValueError):
        forward_op("conv", [Tensor(1.0)])


def test_backward_sum_linear():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = Tensor([2.0], requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [4.0])
    fd = finite_difference_grad(lambda t: (t * t).sum(), x, 1e-4)
    np.testing.assert_allclose(fd.data, [4.0], rtol=1e-8)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(TapeError, match="scalar"):
        backward(x * 2.0)


def test_backward_without_forward():
    with pytest.raises(TapeError):
        backward(Tensor(1.0))


def test_tape_cleared_after_backward():
    x = Tensor([1.0], requires_grad=True)
    loss = (x * 3.0).sum()
    assert T.tape_size() == 2
    backward(loss)
    assert T.tape_size() == 0


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert T.tape_size() == 0
    assert not y.requires_grad


def test_gradient_accumulates_across_uses():
    x = Tensor([1.5, -2.0], requires_grad=True)
    backward((x * 3.0).sum())
    single_a = x.grad.copy()
    x.grad = None
    backward((x * 5.0).sum())
    single_b = x.grad.copy()
    x.grad = None
    backward((x * 3.0 + x * 5.0).sum())
    np.testing.assert_array_equal(x.grad, single_a + single_b)


def test_grads_accumulate_over_backward_calls():
    x = Tensor([1.0], requires_grad=True)
    backward((x * 2.0).sum())
    backward((x * 2.0).sum())
    np.testing.assert_array_equal(x.grad, [4.0])


def test_finite_difference_examples():
    np.testing.assert_allclose(finite_difference_grad(lambda t: t.sum(), Tensor([5.0]), 1e-3).data, [1.0])
    np.testing.assert_allclose(finite_difference_grad(lambda t: (t * t).sum(), Tensor([3.0]), 1e-4).data, [6.0], rtol=1e-9)
    np.testing.assert_allclose(finite_difference_grad(lambda t: T.tanh(t).sum(), Tensor([0.0]), 1e-4).data, [1.0], rtol=1e-8)


def test_finite_difference_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda t: t.sum(), Tensor([1.0]), 0.0)


def test_slice_and_advanced_index_grad():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x[:, 1].sum() + x[[0, 0, 1], [2, 2, 0]].sum())
    np.testing.assert_array_equal(x.grad, [[0, 1, 2], [1, 1, 0]])


def _rand_shape(rng, ndim):
    return tuple(int(n) for n in rng.integers(1, 5, size=ndim))


def _unary_cases(rng):
    shape = _rand_shape(rng, rng.integers(1, 4))
    x = rng.standard_normal(shape)
    # keep kinks away from the finite-difference stencil
    x = np.where(np.abs(x) < 1e-3, 0.1, x)
    return {
        "tanh": (T.tanh, x),
        "relu": (T.relu, x),
        "leaky_relu": (T.leaky_relu, x),
        "elu": (T.elu, x),
        "exp": (T.exp, x),
        "log": (T.log, np.abs(x) + 0.5),
        "power": (lambda t: T.power(t, -0.5), np.abs(x) + 0.5),
        "softmax": (lambda t: T.softmax(t, -1), x),
        "mean_axis": (lambda t: T.mean_axis(t, 0, keepdims=True), x),
        "sum_axis": (lambda t: T.sum_axis(t, -1), x),
        "transpose": (lambda t: T.transpose(t, None), x),
        "reshape": (lambda t: T.reshape(t, (-1,)), x),
        "slice": (lambda t: t[..., :1], x),
    }


@pytest.mark.parametrize("seed", range(100))
def test_op_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, (fn, x0) in _unary_cases(rng).items():
        x = Tensor(x0.copy(), requires_grad=True)
        w = rng.standard_normal(fn(Tensor(x0)).shape)
        loss = lambda: (fn(x) * w).sum()
        errs = grad_errors(loss, {"x": x})
        assert errs["x"] < 1e-6, (name, errs)

    # binary ops with broadcasting
    shape = _rand_shape(rng, 3)
    bshape = tuple(1 if rng.random() < 0.4 else n for n in shape[1:])
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(bshape) + 3.0, requires_grad=True)
    w = rng.standard_normal(shape)
    for name, fn in {"add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div}.items():
        errs = grad_errors(lambda: (fn(a, b) * w).sum(), {"a": a, "b": b})
        assert max(errs.values()) < 1e-6, (name, errs)

    # batched and weight-shared matmul, concat
    m, k, n = _rand_shape(rng, 3)
    a = Tensor(rng.standard_normal((2, m, k)), requires_grad=True)
    wmat = Tensor(rng.standard_normal((k, n)), requires_grad=True)
    bmat = Tensor(rng.standard_normal((2, k, n)), requires_grad=True)
    errs = grad_errors(lambda: ((a @ wmat) * (a @ bmat)).sum(), {"a": a, "w": wmat, "b": bmat})
    assert max(errs.values()) < 1e-6, errs
    c = Tensor(rng.standard_normal((2, m, 3)), requires_grad=True)
    errs = grad_errors(lambda: (T.concat([a, c], axis=-1) ** 2).sum(), {"a": a, "c": c})
    assert max(errs.values()) < 1e-6, errs


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=6),
    st.floats(-100, 100, allow_nan=False),
)
def test_softmax_simplex_and_shift_invariance(xs, c):
    x = np.array(xs)
    p = T.softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(T.softmax(Tensor(x + c)).data, p, atol=1e-6)


def test_grad_rel_error_symmetric_and_zero():
    a = np.array([1.0, 2.0])
    assert grad_rel_error(a, a) == 0.0
    assert grad_rel_error(a, a * 1.1) == pytest.approx(grad_rel_error(a * 1.1, a))
