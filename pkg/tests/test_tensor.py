import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from solarcast import tensor as T
from solarcast.errors import ContractError, DomainError, ShapeError
from solarcast.tensor import RngState, Tape, Tensor

from conftest import numeric_grad, rel_err


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def test_matmul_identity_and_hand_product():
    A = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ A).data, A.data)
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    A = leaf(rng.normal(size=(3, 4)))
    B = Tensor(rng.normal(size=(4, 2)))
    loss = T.tensor_sum(A @ B)
    T.backward(loss)
    num = numeric_grad(lambda: float((A.data @ B.data).sum()), A.data)
    assert rel_err(A.grad, num) < 1e-6


@pytest.mark.parametrize("op,x,expected", [
    ("tanh", 0.0, 0.0),
    ("sigmoid", 0.0, 0.5),
    ("softplus", 0.0, math.log(2.0)),
    ("exp", 0.0, 1.0),
    ("log", 1.0, 0.0),
    ("square", -3.0, 9.0),
])
def test_unary_values(op, x, expected):
    assert T.elementwise(op, Tensor(x)).item() == pytest.approx(expected, abs=1e-15)


def test_softplus_is_overflow_safe():
    out = T.softplus(Tensor([-1000.0, 0.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    assert out[2] == 1000.0 and out[0] >= 0.0


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))


def test_binary_shape_mismatch_is_error():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_bias_broadcast_over_rows_and_gradient():
    x = leaf(np.ones((4, 3)))
    b = leaf([1.0, 2.0, 3.0])
    T.backward(T.tensor_sum(x + b))
    assert b.grad.tolist() == [4.0, 4.0, 4.0]
    assert x.grad.shape == (4, 3)


def test_backward_identity_and_square_sum():
    x = leaf(3.0)
    T.backward(x)
    assert x.grad == 1.0
    v = leaf([1.0, 2.0, 3.0])
    T.backward(T.tensor_sum(T.square(v)))
    assert v.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        T.backward(leaf([1.0, 2.0]) * 2.0)


def test_backward_on_detached_scalar_leaves_zero_grads():
    x = leaf([1.0, 2.0])
    loss = T.tensor_sum(x).detach()
    T.backward(loss)
    assert np.all(x.grad == 0)


def test_fan_out_accumulates():
    x = leaf(2.0)
    y = x * x + x  # x used three times
    T.backward(y)
    assert x.grad == pytest.approx(5.0)


def test_composite_tanh_matmul_gradient(rng):
    W = leaf(rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(5, 3)))

    def loss():
        return T.tensor_sum(T.tanh(x @ W))

    T.backward(loss())
    with T.no_grad():
        num = numeric_grad(lambda: float(loss().data), W.data)
    assert rel_err(W.grad, num) < 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_ops_gradcheck(op, rng):
    a = leaf(rng.normal(size=(3, 2)))
    b = leaf(rng.uniform(0.5, 2.0, size=(3, 2)))

    def loss():
        return T.tensor_sum(T.elementwise(op, a, b) * Tensor(np.arange(6.0).reshape(3, 2)))

    T.backward(loss())
    with T.no_grad():
        for p in (a, b):
            assert rel_err(p.grad, numeric_grad(lambda: float(loss().data), p.data)) < 1e-4


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "softplus", "exp", "log", "square"])
def test_unary_ops_gradcheck(op, rng):
    a = leaf(rng.uniform(0.2, 2.0, size=(4,)))

    def loss():
        return T.tensor_sum(T.elementwise(op, a) * Tensor([1.0, -2.0, 0.5, 3.0]))

    T.backward(loss())
    with T.no_grad():
        assert rel_err(a.grad, numeric_grad(lambda: float(loss().data), a.data)) < 1e-4


def test_backward_is_linear(rng):
    x = leaf(rng.normal(size=(4,)))

    def grad_of(fn):
        x.zero_grad()
        T.backward(fn())
        return x.grad.copy()

    l1 = lambda: T.tensor_sum(T.tanh(x))
    l2 = lambda: T.tensor_sum(T.square(x))
    combo = grad_of(lambda: l1() * 2.0 + l2() * -3.0)
    assert np.allclose(combo, 2.0 * grad_of(l1) - 3.0 * grad_of(l2), atol=1e-12)


def test_tape_is_topological_and_visits_once():
    x = leaf(1.5)
    y = T.tanh(x) * x
    z = y + y
    tape = Tape(z)
    position = {id(n): i for i, n in enumerate(tape.nodes)}
    assert len(position) == len(tape.nodes)
    for node in tape.nodes:
        for parent in node._parents:
            if id(parent) in position:
                assert position[id(parent)] < position[id(node)]


def test_no_grad_builds_no_graph():
    x = leaf(2.0)
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_gradient_buffers_match_shapes(rng):
    W = leaf(rng.normal(size=(2, 3)))
    b = leaf(np.zeros(3))
    T.backward(T.mean(T.square(Tensor(rng.normal(size=(5, 2))) @ W + b)))
    assert W.grad.shape == W.shape and b.grad.shape == b.shape


def test_gaussian_draw_seeded_and_moments():
    a = T.gaussian_draw(RngState(42), (2, 3))
    b = T.gaussian_draw(RngState(42), (2, 3))
    assert a.size == 6 and np.array_equal(a.data, b.data)
    assert not a.requires_grad
    big = T.gaussian_draw(RngState(7), (100_000,)).data
    assert abs(big.mean()) < 0.02 and abs(big.std() - 1.0) < 0.02


def test_rng_spawn_is_deterministic_and_distinct():
    c1 = [r.normal(3) for r in RngState(5).spawn(2)]
    c2 = [r.normal(3) for r in RngState(5).spawn(2)]
    assert np.array_equal(c1[0], c2[0]) and not np.array_equal(c1[0], c1[1])


def test_replay_with_same_rng_is_bit_identical(rng):
    W = leaf(rng.normal(size=(3, 3)))

    def run(seed):
        eps = T.gaussian_draw(RngState(seed), (3, 3))
        return float(T.tensor_sum(T.tanh(W * eps)).data)

    assert run(9) == run(9)


def test_lstm_step_matches_composed_cell(rng):
    from solarcast.layers import lstm_cell_forward

    H, I, B = 3, 2, 4
    W = leaf(rng.normal(size=(4 * H, I)))
    U = leaf(rng.normal(size=(4 * H, H)))
    b = leaf(rng.normal(size=4 * H))
    x = Tensor(rng.normal(size=(B, I)))
    h0, c0 = rng.normal(size=(B, H)), rng.normal(size=(B, H))
    fused = T.lstm_step(x, Tensor(np.concatenate([h0, c0], axis=1)), W, U, b).data
    h, c = lstm_cell_forward((W, U, b), x, (Tensor(h0), Tensor(c0)))
    assert np.allclose(fused, np.concatenate([h.data, c.data], axis=1), atol=1e-14)


def test_lstm_step_gradcheck(rng):
    H, I, B = 2, 3, 2
    W = leaf(rng.normal(size=(4 * H, I)))
    U = leaf(rng.normal(size=(4 * H, H)))
    b = leaf(rng.normal(size=4 * H))
    x = leaf(rng.normal(size=(B, I)))
    hc = leaf(rng.normal(size=(B, 2 * H)))
    weights = Tensor(rng.normal(size=(B, 2 * H)))

    def loss():
        return T.tensor_sum(T.lstm_step(x, hc, W, U, b) * weights)

    T.backward(loss())
    with T.no_grad():
        for p in (W, U, b, x, hc):
            assert rel_err(p.grad, numeric_grad(lambda: float(loss().data), p.data)) < 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
def test_softplus_positive_and_inverse(x):
    y = T.softplus_np(x)
    assert np.all(y > 0) or np.all(x < -30)
    ok = y > 1e-12
    assert np.allclose(T.inverse_softplus_np(y[ok]), x[ok], atol=1e-6)
