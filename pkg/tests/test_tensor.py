import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spacetime_mae import tensor as tc
from spacetime_mae.gradcheck import check_gradients, numeric_grad, rel_error
from spacetime_mae.tensor import ContractError, DimensionError, GradTape, Tensor

GRAD_TOL = 1e-4


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def rand_leaf(rng, *shape):
    return leaf(rng.normal(size=shape))


# forward oracles -------------------------------------------------------------


def test_matmul_identity():
    x = np.arange(12.0).reshape(3, 4)
    out = tc.matmul(Tensor(np.eye(3)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_matmul_hand_example():
    out = tc.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_layer_norm_constant_row_is_zero():
    x = Tensor(np.full((2, 5), 3.7))
    out = tc.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_two_values():
    out = tc.layer_norm(Tensor([[0.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_rejects_wrong_width():
    with pytest.raises(DimensionError):
        tc.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_softmax_examples():
    np.testing.assert_allclose(tc.softmax_rows(Tensor(np.zeros((1, 4)))).data, [[0.25] * 4])
    np.testing.assert_allclose(tc.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-1e3, 1e3))
def test_softmax_rows_sum_to_one_and_shift_invariant(row, c):
    x = np.array([row])
    a = tc.softmax_rows(Tensor(x)).data
    b = tc.softmax_rows(Tensor(x + c)).data
    assert abs(a.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_softmax_is_overflow_safe():
    out = tc.softmax_rows(Tensor([[1e4, 1e4 - 1.0]])).data
    assert np.all(np.isfinite(out))


def test_gelu_at_zero():
    assert tc.gelu(Tensor([0.0])).data[0] == 0.0


def test_gather_all_rows_is_identity(rng):
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(tc.gather_rows(Tensor(x), np.arange(5)).data, x)


def test_scatter_then_gather_roundtrip(rng):
    x = rng.normal(size=(3, 4))
    idx = np.array([4, 0, 2])
    back = tc.gather_rows(tc.scatter_rows(Tensor(x), idx, 6), idx)
    np.testing.assert_array_equal(back.data, x)


def test_scatter_fills_other_rows_with_zero(rng):
    out = tc.scatter_rows(Tensor(rng.normal(size=(2, 3))), [1, 3], 4).data
    np.testing.assert_array_equal(out[[0, 2]], 0.0)


@pytest.mark.parametrize("idx", [[5], [-1], [0, 7]])
def test_gather_out_of_range(idx):
    with pytest.raises(IndexError):
        tc.gather_rows(Tensor(np.ones((5, 2))), idx)


def test_scatter_rejects_duplicates():
    with pytest.raises(ContractError, match="unique"):
        tc.scatter_rows(Tensor(np.ones((2, 2))), [1, 1], 4)


def test_no_silent_broadcast():
    with pytest.raises(DimensionError):
        tc.add(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 1))))
    with pytest.raises(DimensionError):
        tc.mul(Tensor(np.ones((3, 4))), Tensor(np.ones(4)))


def test_zero_extent_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.ones((0, 3)))


# backward ---------------------------------------------------------------------


def test_backward_of_sum_is_ones(rng):
    x = rand_leaf(rng, 3, 4)
    tc.backward(tc.total_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_half_sum_of_squares():
    x = leaf([1.0, 2.0, 3.0])
    tc.backward(tc.scale(tc.total_sum(tc.square(x)), 0.5))
    np.testing.assert_array_equal(x.grad, [1.0, 2.0, 3.0])


def test_backward_needs_scalar():
    x = leaf(np.ones(3))
    with pytest.raises(ContractError):
        tc.backward(tc.scale(x, 2.0))


def test_backward_needs_grad_path():
    with pytest.raises(ContractError):
        tc.backward(tc.total_sum(Tensor(np.ones(3))))


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = tc.mul(x, x)
    tc.backward(tc.total_sum(tc.add(y, y)))
    np.testing.assert_array_equal(x.grad, [8.0])


def test_tape_replays_each_op_once(rng):
    a, b = rand_leaf(rng, 3, 3), rand_leaf(rng, 3, 3)
    h = tc.gelu(tc.matmul(a, b))
    loss = tc.mean(tc.add(h, h))
    tape = GradTape(loss)
    non_leaf = [n for n in tape.ops if n._backward is not None]
    assert len({id(n) for n in tape.ops}) == len(tape.ops)
    # matmul, gelu, add, and mean as sum + scale
    assert [n.op for n in non_leaf] == ["matmul", "gelu", "add", "sum", "scale"]
    assert tape.replay(np.ones(())) == len(non_leaf)
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_no_grad_records_nothing(rng):
    x = rand_leaf(rng, 2, 2)
    with tc.no_grad():
        y = tc.square(x)
    assert y._parents == () and not y.requires_grad


def test_backward_is_deterministic(rng):
    data = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))
    grads = []
    for _ in range(2):
        x, wt = leaf(data), leaf(w)
        tc.backward(tc.mean(tc.gelu(tc.matmul(x, wt))))
        grads.append((x.grad.copy(), wt.grad.copy()))
    assert np.array_equal(grads[0][0], grads[1][0]) and np.array_equal(grads[0][1], grads[1][1])


# finite-difference oracle --------------------------------------------------------


def test_rel_error_floor():
    assert rel_error(np.zeros(3), np.full(3, 1e-12)) < 1e-5
    assert rel_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_numeric_grad_restores_input(rng):
    x = rand_leaf(rng, 4)
    before = x.data.copy()
    numeric_grad(lambda: tc.total_sum(tc.square(x)), x)
    np.testing.assert_array_equal(x.data, before)


def test_matmul_gradient_tight(rng):
    a, b = rand_leaf(rng, 3, 4), rand_leaf(rng, 4, 2)
    errs = check_gradients(lambda: tc.total_sum(tc.matmul(a, b)), [a, b])
    assert max(errs.values()) < 1e-6


def test_layer_norm_gradient(rng):
    x, g, b = rand_leaf(rng, 3, 5), rand_leaf(rng, 5), rand_leaf(rng, 5)
    w = rng.normal(size=(3, 5))
    errs = check_gradients(lambda: tc.total_sum(tc.mul(tc.layer_norm(x, g, b), Tensor(w))), [x, g, b])
    assert max(errs.values()) < 1e-5


def _weighted(out: Tensor, rng) -> Tensor:
    # a random linear functional exercises every output coordinate
    w = Tensor(rng.normal(size=out.shape))
    return tc.total_sum(tc.mul(out, w))


UNARY_OPS = {
    "gelu": tc.gelu,
    "softmax_rows": tc.softmax_rows,
    "log_softmax_rows": tc.log_softmax_rows,
    "square": tc.square,
    "neg": tc.neg,
    "scale": lambda x: tc.scale(x, -1.7),
    "add_scalar": lambda x: tc.add(x, 0.3),
    "mean_over_axis0": lambda x: tc.mean_over_axis(x, 0),
    "mean_over_axis1": lambda x: tc.mean_over_axis(x, 1),
    "reshape": lambda x: tc.reshape(x, (x.shape[1], x.shape[0])),
    "transpose": lambda x: tc.transpose(x),
    "gather_dup": lambda x: tc.gather_rows(x, [0, x.shape[0] - 1, 0]),
    "scatter": lambda x: tc.scatter_rows(x, list(range(x.shape[0]))[::-1], x.shape[0] + 2),
    "concat_self": lambda x: tc.concat([x, tc.scale(x, 2.0)], axis=1),
}


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
@given(rows=st.integers(1, 4), cols=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_unary_op_gradients(name, rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = rand_leaf(rng, rows, cols)
    out = UNARY_OPS[name](x)
    w = rng.normal(size=out.shape)
    errs = check_gradients(lambda: tc.total_sum(tc.mul(UNARY_OPS[name](x), Tensor(w))), [x])
    assert errs[0] < GRAD_TOL


@given(rows=st.integers(1, 4), cols=st.integers(1, 5), seed=st.integers(0, 2**16))
def test_mean_gradient(rows, cols, seed):
    x = rand_leaf(np.random.default_rng(seed), rows, cols)
    errs = check_gradients(lambda: tc.mean(tc.square(x)), [x])
    assert errs[0] < GRAD_TOL


@given(m=st.integers(1, 4), k=st.integers(1, 4), n=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_binary_op_gradients(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_leaf(rng, m, k), rand_leaf(rng, k, n)
    c, bias = rand_leaf(rng, m, k), rand_leaf(rng, n)
    fns = [
        lambda: _weighted(tc.matmul(a, b), np.random.default_rng(seed)),
        lambda: _weighted(tc.linear(a, b, bias), np.random.default_rng(seed)),
        lambda: _weighted(tc.mul(a, c), np.random.default_rng(seed)),
        lambda: _weighted(tc.sub(a, c), np.random.default_rng(seed)),
        lambda: _weighted(tc.add(a, c), np.random.default_rng(seed)),
    ]
    for fn in fns:
        errs = check_gradients(fn, [a, b, c, bias])
        assert max(errs.values()) < GRAD_TOL


@given(seed=st.integers(0, 2**16))
def test_batched_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    a, b = rand_leaf(rng, 2, 3, 4), rand_leaf(rng, 2, 4, 3)
    errs = check_gradients(lambda: _weighted(tc.matmul(a, b), np.random.default_rng(seed)), [a, b])
    assert max(errs.values()) < GRAD_TOL


@given(seed=st.integers(0, 2**16), n=st.integers(1, 6), k=st.integers(2, 5))
def test_cross_entropy_gradient_and_value(seed, n, k):
    rng = np.random.default_rng(seed)
    logits = rand_leaf(rng, n, k)
    labels = rng.integers(0, k, size=n)
    errs = check_gradients(lambda: tc.cross_entropy(logits, labels), [logits])
    assert errs[0] < GRAD_TOL
    x = logits.data
    ref = np.mean(np.log(np.exp(x).sum(1)) - x[np.arange(n), labels])
    assert float(tc.cross_entropy(logits, labels).data) == pytest.approx(ref, rel=1e-12)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises((ValueError, IndexError)):
        tc.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
