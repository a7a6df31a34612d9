"""Unit tests for the tape autodiff engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agformer import autodiff as ad
from agformer.autodiff import Tape, Tensor, backward, parameter
from agformer.errors import ConfigError, NumericError, ShapeError, TapeError

from oracles import finite_difference_grad, max_rel_error


def test_matmul_identity_left_factor():
    out = ad.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])


def test_matmul_hand_arithmetic():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = parameter(rng.standard_normal((3, 4)))
    b = parameter(rng.standard_normal((4, 2)))

    with Tape() as tape:
        loss = ad.sum_all(ad.matmul(a, b))
    backward(tape, loss)

    def f():
        return float((a.data @ b.data).sum())

    assert max_rel_error(a.grad, finite_difference_grad(f, a.data)) < 1e-6
    assert max_rel_error(b.grad, finite_difference_grad(f, b.data)) < 1e-6


def test_softmax_symmetry():
    out = ad.softmax_rows(Tensor([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_analytic():
    out = ad.softmax_rows(Tensor([[0.0, np.log(2.0)]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-15)


def test_softmax_large_logits_stable():
    out = ad.softmax_rows(Tensor([[1000.0, 1000.0, 999.0]]))
    assert np.isfinite(out.data).all()
    assert abs(out.data.sum() - 1.0) < 1e-12
    # analytic reference: exp shifts cancel, [1, 1, e^-1] normalized
    ref = np.array([1.0, 1.0, np.exp(-1.0)])
    np.testing.assert_allclose(out.data[0], ref / ref.sum(), rtol=1e-14)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        ad.softmax_rows(Tensor([[np.nan, 0.0]]))
    with pytest.raises(NumericError):
        ad.softmax_rows(Tensor([[np.inf, 0.0]]))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_softmax_rows_sum_to_one(m, n, seed):
    x = np.random.default_rng(seed).standard_normal((m, n)) * 100
    out = ad.softmax_rows(Tensor(x))
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)


def test_layer_norm_hand_example():
    out = ad.layer_norm_rows(Tensor([[1.0, 3.0]]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=0.0)
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)


def test_layer_norm_constant_row_returns_beta():
    beta = np.array([0.5, -2.0, 3.0])
    out = ad.layer_norm_rows(Tensor([[5.0, 5.0, 5.0]]), Tensor([2.0, 2.0, 2.0]), Tensor(beta), eps=1e-5)
    np.testing.assert_allclose(out.data, beta[None, :], atol=1e-12)


def test_layer_norm_pre_affine_moments():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((16, 8)) * 100  # variance >> eps
    out = ad.layer_norm_rows(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-5)
    assert np.max(np.abs(out.data.mean(axis=1))) < 1e-9
    assert np.max(np.abs(out.data.var(axis=1) - 1.0)) < 1e-6


def test_layer_norm_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    x = parameter(rng.standard_normal((4, 8)))
    gamma = parameter(rng.standard_normal(8))
    beta = parameter(rng.standard_normal(8))

    with Tape() as tape:
        loss = ad.sum_all(ad.layer_norm_rows(x, gamma, beta, 1e-5))
    backward(tape, loss)

    def f():
        mu = x.data.mean(axis=1, keepdims=True)
        var = x.data.var(axis=1, keepdims=True)
        return float(((x.data - mu) / np.sqrt(var + 1e-5) * gamma.data + beta.data).sum())

    for t in (x, gamma, beta):
        assert max_rel_error(t.grad, finite_difference_grad(f, t.data)) < 1e-5


def test_relu():
    out = ad.relu(Tensor([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_add_zeros_is_identity():
    a = np.random.default_rng(1).standard_normal((3, 3))
    out = ad.add(Tensor(a), Tensor(np.zeros((3, 3))))
    np.testing.assert_array_equal(out.data, a)


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


def test_bias_add_broadcasts_rows():
    out = ad.bias_add(Tensor([[1.0, 1.0], [2.0, 2.0]]), Tensor([10.0, 20.0]))
    np.testing.assert_array_equal(out.data, [[11.0, 21.0], [12.0, 22.0]])


def test_dropout_rate_zero_is_identity():
    x = Tensor([[1.0, 2.0]])
    assert ad.dropout(x, 0.0, np.random.default_rng(0), training=True) is x


def test_dropout_eval_is_identity():
    x = Tensor([[1.0, 2.0]])
    assert ad.dropout(x, 0.5, np.random.default_rng(0), training=False) is x


def test_dropout_rejects_rate_one():
    with pytest.raises(ConfigError):
        ad.dropout(Tensor([[1.0]]), 1.0, np.random.default_rng(0), training=True)


def test_dropout_inverted_scaling_is_unbiased():
    # 1e5 ones at rate 0.1: mean stays near 1 (binomial expectation)
    x = Tensor(np.ones((100, 1000)))
    out = ad.dropout(x, 0.1, np.random.default_rng(42), training=True)
    assert 0.97 < out.data.mean() < 1.03


def test_backward_sum_gives_ones():
    x = parameter(np.random.default_rng(0).standard_normal((3, 4)))
    with Tape() as tape:
        loss = ad.sum_all(x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_hand_derivative():
    x = Tensor([[1.0, 2.0]])
    w = parameter([[3.0], [4.0]])
    with Tape() as tape:
        loss = ad.sum_all(ad.matmul(x, w))
    backward(tape, loss)
    np.testing.assert_array_equal(w.grad, [[1.0], [2.0]])


def test_backward_rejects_non_scalar_loss():
    x = parameter(np.ones((2, 2)))
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ShapeError):
        backward(tape, y)


def test_backward_rejects_detached_loss():
    x = parameter(np.ones((2, 2)))
    with Tape() as tape:
        ad.sum_all(x)
    detached = ad.sum_all(x)  # recorded on no tape
    with pytest.raises(TapeError):
        backward(tape, detached)


def test_no_tape_means_no_recording():
    x = parameter(np.ones((2, 2)))
    out = ad.relu(x)
    assert out.requires_grad is False


def _loss_through(op_builder, tensors, extra=()):
    with Tape() as tape:
        out = op_builder(*tensors, *extra)
        loss = ad.sum_all(out) if out.ndim else out
    backward(tape, loss)
    return loss


@pytest.mark.parametrize("name", [
    "matmul", "transpose", "add", "scale", "scalar_mul", "relu", "bias_add",
    "softmax_rows", "layer_norm_rows", "dropout", "mean_rows", "reshape",
])
def test_gradient_check_every_op(name):
    """Central finite differences (h=1e-5) against every backward rule."""
    rng = np.random.default_rng(11)
    a = parameter(rng.standard_normal((4, 5)) + 0.3)  # offset keeps relu away from kinks
    b = parameter(rng.standard_normal((5, 3)))
    vec = parameter(rng.standard_normal(5))
    scalar = parameter(np.asarray(1.7))
    drop_seed = 99

    builders = {
        "matmul": (lambda: ad.matmul(a, b), (a, b)),
        "transpose": (lambda: ad.matmul(ad.transpose(a), a), (a,)),
        "add": (lambda: ad.add(a, ad.relu(a)), (a,)),
        "scale": (lambda: ad.scale(a, -2.5), (a,)),
        "scalar_mul": (lambda: ad.scalar_mul(a, scalar), (a, scalar)),
        "relu": (lambda: ad.relu(a), (a,)),
        "bias_add": (lambda: ad.bias_add(a, vec), (a, vec)),
        "softmax_rows": (lambda: ad.matmul(ad.softmax_rows(a), b), (a, b)),
        "layer_norm_rows": (
            lambda: ad.matmul(ad.layer_norm_rows(a, vec, ad.relu(vec), 1e-5), b),
            (a, vec, b)),
        "dropout": (
            lambda: ad.dropout(a, 0.4, np.random.default_rng(drop_seed), training=True), (a,)),
        "mean_rows": (lambda: ad.reshape(ad.mean_rows(a), (1, 5)), (a,)),
        "reshape": (lambda: ad.reshape(a, (5, 4)), (a,)),
    }
    build, leaves = builders[name]
    for leaf in leaves:
        leaf.grad = None
    with Tape() as tape:
        out = build()
        loss = ad.sum_all(out) if out.ndim else out
    backward(tape, loss)

    def f():
        out = build()  # no tape active: pure forward
        return float(out.data.sum())

    for leaf in leaves:
        fd = finite_difference_grad(f, leaf.data)
        assert max_rel_error(leaf.grad, fd) < 1e-4, name


def test_spmm_gradient_and_forward():
    from agformer.graphs import normalized_adjacency
    from conftest import build_graph

    g = build_graph(4, [(0, 1), (1, 2), (2, 3)])
    op = normalized_adjacency(g)
    x = parameter(np.random.default_rng(5).standard_normal((4, 3)))
    with Tape() as tape:
        loss = ad.sum_all(ad.matmul(ad.spmm(op, x), Tensor(np.random.default_rng(6).standard_normal((3, 2)))))
    backward(tape, loss)
    dense = op.to_dense()

    w = np.random.default_rng(6).standard_normal((3, 2))

    def f():
        return float((dense @ x.data @ w).sum())

    assert max_rel_error(x.grad, finite_difference_grad(f, x.data)) < 1e-6


def test_deterministic_bitwise_reruns():
    def run():
        rng = np.random.default_rng(123)
        x = parameter(rng.standard_normal((6, 6)))
        w = parameter(rng.standard_normal((6, 6)))
        with Tape() as tape:
            h = ad.relu(ad.matmul(x, w))
            h = ad.dropout(h, 0.2, np.random.default_rng(77), training=True)
            h = ad.softmax_rows(h)
            loss = ad.sum_all(ad.layer_norm_rows(h, Tensor(np.ones(6)), Tensor(np.zeros(6)), 1e-5))
        backward(tape, loss)
        return x.data.copy(), x.grad.copy(), loss.data.copy()

    first = run()
    second = run()
    for lhs, rhs in zip(first, second):
        assert np.array_equal(lhs, rhs)


def test_grad_accumulates_across_tapes():
    x = parameter(np.ones((2, 2)))
    for _ in range(3):
        with Tape() as tape:
            loss = ad.sum_all(x)
        backward(tape, loss)
    np.testing.assert_array_equal(x.grad, 3 * np.ones((2, 2)))
