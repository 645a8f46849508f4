import threading

import numpy as np
import pytest

import tensor_core as tc
from errors import ContractError, DimensionError, DomainError
from tensor_core import Tape, Tensor


def test_layer_norm_of_two_values():
    x = Tensor([[1.0, 3.0]])
    out = tc.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_rejects_mismatched_gamma():
    with pytest.raises(DimensionError):
        tc.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


def test_matmul_gradients():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = Tensor([[1.0], [-1.0]], requires_grad=True)
    with Tape() as tape:
        loss = tc.sum_(tc.matmul(a, b))
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, [[1.0, -1.0], [1.0, -1.0]])
    np.testing.assert_allclose(b.grad, [[4.0], [6.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_batched_matmul_against_shared_matrix():
    a = Tensor(np.ones((4, 2, 3)), requires_grad=True)
    w = Tensor(np.full((3, 5), 0.5), requires_grad=True)
    with Tape() as tape:
        loss = tc.sum_(tc.matmul(a, w))
    tape.backward(loss)
    assert w.grad.shape == (3, 5)
    np.testing.assert_allclose(w.grad, np.full((3, 5), 8.0))


def test_broadcast_add_reduces_gradient():
    a = Tensor(np.zeros((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    with Tape() as tape:
        loss = tc.sum_(tc.add(a, b))
    tape.backward(loss)
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_incompatible_broadcast_raises():
    with pytest.raises(DimensionError):
        tc.add(Tensor(np.ones((3, 4))), Tensor(np.ones(3)))


def test_no_tape_means_no_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = tc.relu(x)
    assert not y.requires_grad
    with Tape() as tape:
        tc.relu(Tensor([1.0, 2.0]))
    assert len(tape) == 0


def test_backward_after_leaving_context():
    x = Tensor([2.0], requires_grad=True)
    with Tape():
        loss = tc.sum_(tc.square(x))
    tc.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = tc.scale(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_gradient_accumulates_over_shared_uses():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = tc.sum_(tc.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])


def test_softmax_rows_sum_to_one():
    out = tc.softmax_lastdim(Tensor(np.array([[1000.0, 1000.0], [0.0, np.log(3.0)]])))
    np.testing.assert_allclose(out.data.sum(axis=-1), [1.0, 1.0])
    np.testing.assert_allclose(out.data[1], [0.25, 0.75])


def test_gelu_values():
    out = tc.gelu(Tensor([0.0, 10.0, -10.0]))
    np.testing.assert_allclose(out.data, [0.0, 10.0, 0.0], atol=1e-6)


def test_ln1p_domain():
    with pytest.raises(DomainError):
        tc.ln1p(Tensor([-1.0]))


def test_elementwise_dispatch():
    np.testing.assert_allclose(tc.elementwise("relu", Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    with pytest.raises(ContractError):
        tc.elementwise("tanh", Tensor([1.0]))


def test_take_rows_scatters_gradient():
    table = Tensor(np.zeros((4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = tc.sum_(tc.take_rows(table, np.array([1, 1, 3])))
    tape.backward(loss)
    np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_concat_and_take_route_gradients():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    with Tape() as tape:
        joined = tc.concat([a, b], axis=-1)
        loss = tc.sum_(tc.take(joined, 0, axis=0))
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, [[1, 1], [0, 0]])
    np.testing.assert_allclose(b.grad, [[1, 1, 1], [0, 0, 0]])


def test_dropout_is_identity_outside_training():
    x = Tensor(np.ones(10))
    assert tc.dropout(x, 0.5, None, training=False) is x
    with pytest.raises(ContractError):
        tc.dropout(x, 0.5, None, training=True)


def test_zero_extent_tensor_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.ones((0, 3)))


def test_tapes_are_thread_local():
    seen = []

    def worker():
        seen.append(tc.active_tape())

    with Tape():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen == [None]
