import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from camtrap import gradcheck
from camtrap.autograd import (
    SGD,
    Parameter,
    RunningStats,
    ShapeError,
    Tensor,
    backward,
    no_grad,
    ops,
    sgd_step,
)


def leaf(arr, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True, dtype=dtype)


# --- Tensor -----------------------------------------------------------------


def test_tensor_defaults_to_float32():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32 and t.shape == (2, 2) and t.grad is None


def test_grad_never_allocated_without_requires_grad():
    a = Tensor(np.ones((2, 3)))
    w = leaf(np.ones((2, 3)))
    backward(ops.total(ops.add(a, w)))
    assert a.grad is None
    assert w.grad.shape == w.shape and w.grad.dtype == w.dtype


def test_dump_grid():
    assert Tensor([[1.0, 2.5], [3.0, 4.0]]).dump(1) == "1.0 2.5\n3.0 4.0"


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        backward(ops.relu(leaf(np.ones(3))))


def test_constant_loss_leaves_grads_empty():
    w = leaf(np.ones(3))
    backward(ops.total(Tensor(np.ones(3))))
    assert w.grad is None


def test_gradients_accumulate_until_zeroed():
    w = leaf(np.array([1.0, -2.0]))
    backward(ops.total(w))
    backward(ops.total(w))
    np.testing.assert_array_equal(w.grad, [2.0, 2.0])
    w.zero_grad()
    backward(ops.total(w))
    np.testing.assert_array_equal(w.grad, [1.0, 1.0])


def test_no_grad_records_nothing():
    w = leaf(np.ones(2))
    with no_grad():
        out = ops.relu(w)
    assert not out.requires_grad


def test_chain_rule_two_affines():
    x = leaf([[0.5, -1.0]])
    w1, b1 = leaf([[1.0, 2.0], [3.0, -1.0]]), leaf([0.1, 0.2])
    w2, b2 = leaf([[2.0, 0.5], [-1.0, 1.5]]), leaf([0.0, 0.3])
    y = ops.affine(ops.affine(x, w1, b1), w2, b2)
    backward(ops.total(y))
    # d sum(y) / dx = 1^T W2 W1
    np.testing.assert_allclose(x.grad, np.ones((1, 2)) @ w2.data @ w1.data)
    np.testing.assert_allclose(w2.grad, np.ones((2, 1)) @ (x.data @ w1.data.T + b1.data))


# --- conv2d / pooling -------------------------------------------------------


def test_conv_identity_kernel():
    x = np.ones((1, 1, 3, 3))
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_sum_kernel():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0


def test_conv_matches_direct_loops(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 2))
    b = rng.standard_normal(4)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (5 + 2 - 3) // 2 + 1, (6 + 2 - 2) // 2 + 1
    ref = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    ref[n, o, i, j] = (xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 2] * w[o]).sum() + b[o]
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_conv_errors():
    with pytest.raises(ShapeError, match="channel"):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


@given(
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    k=st.integers(1, 4),
    stride=st.integers(1, 3),
    pad=st.integers(0, 2),
)
def test_conv_shape_floor_formula(h, w, k, stride, pad):
    x = Tensor(np.zeros((1, 2, h, w)))
    weight = Tensor(np.zeros((3, 2, k, k)))
    if h + 2 * pad < k or w + 2 * pad < k:
        with pytest.raises(ShapeError):
            ops.conv2d(x, weight, stride=stride, pad=pad)
        return
    out = ops.conv2d(x, weight, stride=stride, pad=pad)
    assert out.shape == (1, 3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


def test_maxpool_of_four():
    out = ops.pool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), "max", k=2, stride=2)
    assert out.data.item() == 4.0


@pytest.mark.parametrize("kind", ["max", "avg", "global-avg"])
def test_pool_constant_input(kind):
    out = ops.pool2d(Tensor(np.full((2, 3, 4, 4), 2.5)), kind, k=2, stride=2)
    np.testing.assert_allclose(out.data, 2.5)


def test_global_avg_shape():
    assert ops.pool2d(Tensor(np.ones((2, 3, 5, 4))), "global-avg").shape == (2, 3, 1, 1)


def test_maxpool_backward_routes_to_argmax(rng):
    x = leaf(rng.standard_normal((1, 1, 4, 4)))
    g = rng.standard_normal((1, 1, 2, 2))
    backward(ops.weighted_sum(ops.pool2d(x, "max", k=2, stride=2), g))
    expected = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            win = x.data[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
            a, b = np.unravel_index(np.argmax(win), (2, 2))
            expected[2 * i + a, 2 * j + b] = g[0, 0, i, j]
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_ties_route_to_first_occurrence():
    x = leaf(np.ones((1, 1, 2, 2)))
    backward(ops.total(ops.pool2d(x, "max", k=2, stride=2)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_avgpool_backward_uniform():
    x = leaf(np.arange(16.0).reshape(1, 1, 4, 4))
    backward(ops.total(ops.pool2d(x, "avg", k=2, stride=2)))
    np.testing.assert_allclose(x.grad, 0.25)


def test_pool_kernel_too_large():
    with pytest.raises(ShapeError):
        ops.pool2d(Tensor(np.ones((1, 1, 2, 2))), "max", k=3, stride=1)


# --- affine / relu ----------------------------------------------------------


def test_affine_identity_and_bias():
    x = np.arange(6.0).reshape(2, 3)
    out = ops.affine(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)
    out = ops.affine(Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3))), Tensor([1.0, -1.0]))
    np.testing.assert_array_equal(out.data, [[1.0, -1.0], [1.0, -1.0]])


def test_affine_dimension_mismatch():
    with pytest.raises(ShapeError):
        ops.affine(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_relu_cases():
    neg = -np.arange(1.0, 5.0)
    np.testing.assert_array_equal(ops.relu(Tensor(neg)).data, 0.0)
    pos = np.arange(1.0, 5.0)
    np.testing.assert_array_equal(ops.relu(Tensor(pos)).data, pos)
    x = leaf([-1.0, 0.0, 2.0, -3.0, 4.0])
    backward(ops.total(ops.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0, 0.0, 1.0])


# --- batchnorm ---------------------------------------------------------------


def test_batchnorm_fixed_point(rng):
    x = rng.standard_normal((8, 2, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = ops.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), RunningStats(2, np.float64))
    np.testing.assert_allclose(out.data, x, atol=1e-3)


def test_batchnorm_zero_gamma_gives_beta(rng):
    out = ops.batchnorm2d(
        Tensor(rng.standard_normal((4, 3, 2, 2))),
        Tensor(np.zeros(3)),
        Tensor([1.0, 2.0, 3.0]),
        RunningStats(3, np.float64),
    )
    np.testing.assert_allclose(out.data, np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1) * np.ones((4, 3, 2, 2)))


def test_batchnorm_output_moments(rng):
    x = Tensor(rng.standard_normal((6, 3, 5, 5)) * 4 + 2)
    out = ops.batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats(3, np.float64)).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batchnorm_running_update_and_eval(rng):
    stats = RunningStats(2, np.float64)
    with pytest.raises(RuntimeError, match="uninitialized running statistics"):
        ops.batchnorm2d(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, "eval")
    x = rng.standard_normal((4, 2, 3, 3))
    ops.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, "train", momentum=0.1)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
    out = ops.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, "eval").data
    ref = (x - stats.mean.reshape(1, 2, 1, 1)) / np.sqrt(stats.var.reshape(1, 2, 1, 1) + 1e-5)
    np.testing.assert_allclose(out, ref)


# --- dropout ----------------------------------------------------------------


def test_dropout_identity_cases(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    np.testing.assert_array_equal(ops.dropout(x, 0.0, "train", rng).data, x.data)
    np.testing.assert_array_equal(ops.dropout(x, 0.7, "eval").data, x.data)


def test_dropout_rate_and_scaling():
    x = Tensor(np.ones(10**6, dtype=np.float32))
    out = ops.dropout(x, 0.5, "train", np.random.default_rng(3)).data
    assert abs(np.mean(out == 0) - 0.5) <= 0.01
    np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])


def test_dropout_deterministic_and_invalid():
    x = Tensor(np.ones(50))
    a = ops.dropout(x, 0.3, "train", np.random.default_rng(9)).data
    b = ops.dropout(x, 0.3, "train", np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, "train", np.random.default_rng(0))


# --- softmax cross-entropy --------------------------------------------------


def test_uniform_logits_loss_is_log_c():
    loss = ops.softmax_cross_entropy(Tensor(np.zeros((3, 26)), dtype=np.float64), [0, 5, 25])
    assert loss.data.item() == pytest.approx(math.log(26), abs=1e-12)
    assert math.log(26) == pytest.approx(3.2581, abs=1e-4)


def test_saturated_correct_prediction():
    logits = np.zeros((2, 4))
    logits[[0, 1], [1, 3]] = 1000.0
    assert ops.softmax_cross_entropy(Tensor(logits), [1, 3]).data.item() < 1e-6


def test_cross_entropy_gradient_closed_form(rng):
    logits = leaf(rng.standard_normal((4, 26)))
    labels = np.array([0, 3, 25, 7])
    backward(ops.softmax_cross_entropy(logits, labels))
    p = ops.softmax(logits.data)
    onehot = np.eye(26)[labels]
    np.testing.assert_allclose(logits.grad, (p - onehot) / 4, atol=1e-12)


def test_label_range_error():
    with pytest.raises(ValueError, match="out of range"):
        ops.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.integers(1, 5))
def test_softmax_rows_are_distributions(values, rows):
    logits = np.tile(np.array(values), (rows, 1))
    p = ops.softmax(logits)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


# --- SGD --------------------------------------------------------------------


def _param(value, grad, trainable=True, name="w"):
    p = Parameter(name, Tensor(np.array(value, dtype=np.float64), dtype=np.float64))
    p.trainable = trainable
    p.tensor.grad = np.array(grad, dtype=np.float64)
    return p


def test_vanilla_step():
    p = _param([1.0, 2.0], [0.5, -1.0])
    sgd_step([p], lr=0.1)
    np.testing.assert_array_equal(p.data, np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]))


def test_frozen_parameter_untouched():
    p = _param([1.0, 2.0], [0.0, 0.0], trainable=False)
    p.tensor.grad = np.array([3.0, 3.0])
    before = p.data.copy()
    SGD([p], momentum=0.9, weight_decay=0.1).step(0.5)
    assert p.data.tobytes() == before.tobytes()


def test_momentum_two_step_closed_form():
    g = np.array([0.3, -0.7])
    p = _param([1.0, 1.0], g)
    opt = SGD([p], momentum=0.9)
    opt.step(0.1)
    p.tensor.grad = g.copy()
    opt.step(0.1)
    np.testing.assert_allclose(p.data, 1.0 - 0.1 * (g + 1.9 * g), atol=1e-15)


def test_weight_decay_term():
    p = _param([2.0], [0.0])
    SGD([p], weight_decay=0.5).step(0.1)
    np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])


def test_missing_gradient_error():
    p = Parameter("w", Tensor(np.ones(2)))
    with pytest.raises(RuntimeError, match="no gradient"):
        SGD([p]).step(0.1)


# --- finite differences -----------------------------------------------------


@pytest.mark.parametrize("case", gradcheck._op_cases(), ids=lambda c: c[0])
def test_op_gradients_match_finite_differences(case):
    name, fwd, tensors = case
    assert gradcheck.check(fwd, tensors) <= gradcheck.TOL, name


@given(
    n=st.integers(1, 3),
    c=st.integers(1, 3),
    side=st.integers(3, 6),
    k=st.integers(1, 3),
    stride=st.integers(1, 2),
    pad=st.integers(0, 1),
    seed=st.integers(0, 2**16),
)
def test_conv_gradient_randomized_shapes(n, c, side, k, stride, pad, seed):
    r = np.random.default_rng(seed)
    x, w, b = leaf(r.standard_normal((n, c, side, side))), leaf(r.standard_normal((2, c, k, k))), leaf(r.standard_normal(2))
    err = gradcheck.check(lambda: ops.conv2d(x, w, b, stride=stride, pad=pad), [x, w, b], seed=seed)
    assert err <= gradcheck.TOL


def test_eval_forward_bit_deterministic(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))

    def f():
        return ops.pool2d(ops.relu(ops.conv2d(x, w, pad=1)), "max", k=2).data.tobytes()

    assert f() == f()
