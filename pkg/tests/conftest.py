import numpy as np
import pytest

from solarcast import tensor as T


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def check_grads(loss_fn, params, tol=1e-4):
    """Compare tape gradients of ``loss_fn()`` against finite differences for every tensor in ``params``."""
    T.zero_grad(params)
    T.backward(loss_fn())
    analytic = [p.grad.copy() for p in params]
    with T.no_grad():
        for p, a in zip(params, analytic):
            num = numeric_grad(lambda: float(loss_fn().data), p.data)
            assert rel_err(a, num) < tol, (p.shape, rel_err(a, num))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
