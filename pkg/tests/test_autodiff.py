import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssan import autodiff as ad
from ssan.autodiff import ParamStore, Tape, Tensor, adam_step, backward
from ssan.errors import ContractError, DimensionError, InputError
from ssan.gradcheck import check_gradients, op_cases, relative_error


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


# ------------------------------------------------------------------ matmul


def test_matmul_identity():
    out = ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_dot():
    assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_matmul_gradient_fd():
    rng = np.random.default_rng(1)
    a, b = leaf(rng.normal(size=(4, 5))), leaf(rng.normal(size=(5, 3)))
    w = rng.normal(size=(4, 3))
    errs = check_gradients(lambda: ad.sum_all(ad.mul(ad.matmul(a, b), w)), [a, b])
    assert max(errs) < 1e-5


def test_matmul_backward_formula():
    rng = np.random.default_rng(2)
    a, b = leaf(rng.normal(size=(3, 2))), leaf(rng.normal(size=(2, 4)))
    g = rng.normal(size=(3, 4))
    with Tape():
        loss = ad.sum_all(ad.mul(ad.matmul(a, b), g))
    backward(loss)
    np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-12)


# ----------------------------------------------------------------- softmax


def test_softmax_uniform_row():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, 0, 0]])).data, [[1 / 3] * 3], atol=1e-15)


def test_softmax_saturates_without_overflow():
    out = ad.softmax_rows(Tensor([[1000.0, 0, 0]])).data
    np.testing.assert_allclose(out, [[1, 0, 0]], atol=1e-9)
    assert np.all(np.isfinite(out))


def test_softmax_high_precision_oracle():
    getcontext().prec = 50
    e = [Decimal(v).exp() for v in (1, 2, 3)]
    ref = [float(x / sum(e)) for x in e]
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[1.0, 2, 3]])).data[0], ref, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-700, 700)))
def test_softmax_rows_are_distributions(x):
    p = ad.softmax_rows(Tensor(x)).data
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


# ----------------------------------------------------------------- sigmoid


def test_sigmoid_values():
    s = ad.sigmoid(Tensor([0.0, 50.0, -50.0])).data
    assert s[0] == 0.5
    assert abs(s[1] - 1.0) < 1e-15
    assert s[2] == pytest.approx(1.0 / (1.0 + math.exp(50.0)), rel=1e-12)
    assert s[2] == pytest.approx(1.9287e-22, rel=1e-4)


def test_sigmoid_extreme_inputs_stay_finite():
    with np.errstate(over="raise"):
        s = ad.sigmoid(Tensor([-1e4, 1e4])).data
    assert s.tolist() == [0.0, 1.0]


def test_sigmoid_gradient_matches_analytic_and_fd():
    x = leaf(np.linspace(-4, 4, 9))
    with Tape():
        loss = ad.sum_all(ad.sigmoid(x))
    backward(loss)
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, s * (1 - s), rtol=1e-12)
    h = 1e-5
    fd = (1 / (1 + np.exp(-(x.data + h))) - 1 / (1 + np.exp(-(x.data - h)))) / (2 * h)
    np.testing.assert_allclose(x.grad, fd, atol=1e-6)


# -------------------------------------------------------------- layer norm


def test_layer_norm_constant_row_is_zero():
    out = ad.layer_norm(Tensor([[2.0, 2.0, 2.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    np.testing.assert_array_equal(out, [[0.0, 0.0, 0.0]])


def test_layer_norm_two_points():
    out = ad.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_gradient_fd():
    rng = np.random.default_rng(3)
    x, g, b = leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=5)), leaf(rng.normal(size=5))
    w = rng.normal(size=(3, 5))
    assert max(check_gradients(lambda: ad.sum_all(ad.mul(ad.layer_norm(x, g, b), w)), [x, g, b])) < 1e-4


# ----------------------------------------------------------- cross entropy


def test_cross_entropy_confident_is_zero():
    logits = np.eye(3) * 1e6
    assert ad.cross_entropy(Tensor(logits), [0, 1, 2]).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_uniform_is_log_c():
    assert ad.cross_entropy(Tensor(np.zeros((2, 3))), [0, 2]).item() == pytest.approx(math.log(3), rel=1e-15)


def test_cross_entropy_logsumexp_oracle():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, size=5)
    ref = np.mean([math.log(math.fsum(math.exp(v) for v in row)) - row[k] for row, k in zip(z, y)])
    assert ad.cross_entropy(Tensor(z), y).item() == pytest.approx(ref, abs=1e-9)


def test_cross_entropy_backward_is_softmax_minus_onehot():
    rng = np.random.default_rng(5)
    z = leaf(rng.normal(size=(4, 3)))
    y = np.array([0, 2, 1, 1])
    with Tape():
        loss = ad.cross_entropy(z, y)
    backward(loss)
    p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(z.grad, (p - np.eye(3)[y]) / 4, atol=1e-15)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        ad.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    w = leaf(np.random.default_rng(6).normal(size=(3, 4)))
    with Tape():
        loss = ad.sum_all(w)
    backward(loss)
    np.testing.assert_array_equal(w.grad, np.ones((3, 4)))


def test_backward_unused_parameter_gets_zero():
    store = ParamStore()
    w = store.add("w", np.ones((2, 2)))
    x = leaf([1.0, 2.0])
    store.zero_grad()
    with Tape():
        loss = ad.sum_all(ad.mul(x, x))
    backward(loss)
    np.testing.assert_array_equal(w.grad, np.zeros((2, 2)))


def test_backward_non_scalar_is_contract_error():
    x = leaf([1.0, 2.0])
    with Tape():
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        backward(y)


def test_tensor_used_twice_accumulates_both_paths():
    x = leaf([1.5, -2.0])
    with Tape():
        y = ad.exp(x)
        loss = ad.sum_all(ad.add(ad.mul(y, y), y))  # e^{2x} + e^x
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * np.exp(2 * x.data) + np.exp(x.data), rtol=1e-14)


def test_tape_is_single_use():
    x = leaf([1.0])
    tape = Tape()
    with tape:
        loss = ad.sum_all(ad.mul(x, 3.0))
    backward(loss)
    with pytest.raises(ContractError):
        with tape:
            pass


def test_forward_is_deterministic():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

    def run():
        with Tape():
            return ad.softmax_rows(ad.matmul(Tensor(a), Tensor(b))).data

    assert run().tobytes() == run().tobytes()


def test_ops_outside_tape_record_nothing():
    x = leaf([1.0, 2.0])
    y = ad.mul(x, 3.0)
    assert y.is_leaf and not y.requires_grad


# ------------------------------------------------------------ fd per op


@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes_fd(seed):
    for name, fn, leaves in op_cases(seed):
        errs = check_gradients(fn, leaves)
        assert max(errs) < 1e-4, name


def test_relative_error_is_normwise():
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
    assert relative_error(np.zeros(3), np.full(3, 1e-14)) == 0.0
    assert relative_error(np.array([3.0, 4.0]), np.array([0.0, 0.0])) == 1.0


# ------------------------------------------------------------------- adam


def test_adam_zero_grad_leaves_params():
    store = ParamStore()
    w = store.add("w", [1.0, -2.0])
    store.zero_grad()
    adam_step(store, lr=0.1)
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_adam_hand_recurrence():
    store = ParamStore()
    w = store.add("w", [0.5])
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    m = v = 0.0
    ref = 0.5
    for t, g in enumerate([1.0, -0.5, 2.0], start=1):
        w.grad = np.array([g])
        adam_step(store, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        assert w.data[0] == pytest.approx(ref, abs=1e-15)
    np.testing.assert_array_equal(w.grad, [0.0])


def test_adam_first_step_magnitude():
    store = ParamStore()
    w = store.add("w", [0.0])
    w.grad = np.array([1.0])
    adam_step(store, lr=0.1)
    assert w.data[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_adam_identical_params_stay_identical():
    store = ParamStore()
    a, b = store.add("a", [0.3, 0.7]), store.add("b", [0.3, 0.7])
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = rng.normal(size=2)
        a.grad, b.grad = g.copy(), g.copy()
        adam_step(store, lr=0.05)
    assert a.data.tobytes() == b.data.tobytes()


def test_adam_missing_grad_is_contract_error():
    store = ParamStore()
    store.add("w", [1.0])
    with pytest.raises(ContractError):
        adam_step(store, lr=0.1)


def test_param_store_rejects_duplicate_names():
    store = ParamStore()
    store.add("w", [1.0])
    with pytest.raises(ContractError):
        store.add("w", [2.0])


def test_tensor_shape_and_values():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert t.shape == (2, 3)
    assert len(t.values) == 6 and t.values[4] == 4.0


def test_embedding_rejects_bad_ids():
    with pytest.raises(InputError):
        ad.embedding(Tensor(np.zeros((3, 2))), [0, 3])
