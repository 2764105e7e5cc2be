import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from solarcast import tensor as T
from solarcast.errors import ContractError
from solarcast.layers import PriorSpec
from solarcast.losses import (
    GaussianPrediction,
    elbo_loss,
    gaussian_nll,
    kl_gaussian,
    pinball_training_loss,
    vae_loss,
)
from solarcast.tensor import Tensor

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def kl_by_integration(mq, sq, mp, sp):
    """Trapezoid rule over +/-10 sigma_q with step 1e-3 of q log(q/p)."""
    x = np.arange(mq - 10 * sq, mq + 10 * sq, 1e-3)
    return integrate.trapezoid(stats.norm.pdf(x, mq, sq) * (stats.norm.logpdf(x, mq, sq) - stats.norm.logpdf(x, mp, sp)), x)


def nll(y, mu, sigma):
    return gaussian_nll(GaussianPrediction(Tensor(mu), Tensor(sigma)), Tensor(y)).item()


def test_gaussian_nll_values():
    assert nll([0.0], [0.0], [1.0]) == pytest.approx(HALF_LOG_2PI, abs=1e-12)
    assert nll([1.0], [0.0], [1.0]) == pytest.approx(1.418939, abs=1e-6)


def test_gaussian_nll_matches_scipy(rng):
    y, mu, s = rng.normal(size=50), rng.normal(size=50), rng.uniform(0.1, 3, size=50)
    assert nll(y, mu, s) == pytest.approx(-stats.norm.logpdf(y, mu, s).mean(), rel=1e-12)


def test_gaussian_nll_minimisers():
    y = 0.7
    mus = np.linspace(-1, 2, 301)
    assert mus[np.argmin([nll([y], [m], [0.5]) for m in mus])] == pytest.approx(y, abs=1e-9)
    sigmas = np.linspace(0.05, 2, 391)
    assert sigmas[np.argmin([nll([y], [0.2], [s]) for s in sigmas])] == pytest.approx(0.5, abs=1e-9)


def test_gaussian_nll_rejects_nonpositive_std():
    with pytest.raises(ContractError):
        nll([0.0], [0.0], [0.0])


def test_kl_closed_form_values():
    assert kl_gaussian(0.0, 1.0, 0.0, 1.0).item() == 0.0
    assert kl_gaussian(1.0, 1.0, 0.0, 1.0).item() == pytest.approx(0.5, abs=1e-15)
    assert kl_gaussian(0.0, 0.5, 0.0, 1.0).item() == pytest.approx(math.log(2) + 0.125 - 0.5, abs=1e-15)


@pytest.mark.parametrize("mq,sq,mp,sp", [(1, 1, 0, 1), (0, 0.5, 0, 1), (-2.5, 0.3, 1.0, 2.0), (2.0, 2.5, -1.0, 0.7)])
def test_kl_matches_numerical_integration(mq, sq, mp, sp):
    assert kl_gaussian(mq, sq, mp, sp).item() == pytest.approx(kl_by_integration(mq, sq, mp, sp), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(-3, 3), st.floats(0.1, 3))
def test_kl_nonnegative_and_agrees_with_oracle(mq, sq, mp, sp):
    kl = kl_gaussian(mq, sq, mp, sp).item()
    assert kl >= -1e-12
    assert kl == pytest.approx(kl_by_integration(mq, sq, mp, sp), abs=1e-6)


def test_kl_contract():
    with pytest.raises(ContractError):
        kl_gaussian(0.0, -1.0, 0.0, 1.0)


def test_elbo_loss_arithmetic():
    rep = elbo_loss(1.0, 2.0, 0.5)
    assert rep.elbo_objective == 2.0 and rep.nll == 1.0 and rep.kl == 2.0
    assert elbo_loss(0.7, 0.0).elbo_objective == 0.7
    with pytest.raises(ContractError):
        elbo_loss(1.0, -0.1)


def test_vae_loss_examples():
    prior = PriorSpec()
    zero = vae_loss(Tensor([[0.3, -0.2]]), Tensor([[0.3, -0.2]]), Tensor([[0.0]]), Tensor([[1.0]]), prior)
    assert zero.item() == 0.0
    kl_only = vae_loss(Tensor([[0.3, -0.2]]), Tensor([[0.3, -0.2]]), Tensor([[1.0]]), Tensor([[1.0]]), prior)
    assert kl_only.item() == pytest.approx(0.5)
    mse_only = vae_loss(Tensor([[0.0, 0.0]]), Tensor([[1.0, 1.0]]), Tensor([[0.0]]), Tensor([[1.0]]), prior)
    assert mse_only.item() == pytest.approx(1.0)


def test_vae_loss_kl_averaged_over_batch():
    x = Tensor(np.zeros((4, 3)))
    mu = Tensor(np.ones((4, 2)))
    out = vae_loss(x, x, mu, Tensor(np.ones((4, 2))))
    assert out.item() == pytest.approx(1.0)  # 2 latents x 0.5, batch mean


def test_pinball_values():
    assert pinball_training_loss([1.0], [0.8], 0.9).item() == pytest.approx(0.18, abs=1e-12)
    assert pinball_training_loss([0.5], [0.7], 0.9).item() == pytest.approx(0.02, abs=1e-12)
    assert pinball_training_loss([0.4], [0.4], 0.3).item() == 0.0
    with pytest.raises(ContractError):
        pinball_training_loss([1.0], [0.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 0.99), st.floats(-5, 5), st.floats(0, 5))
def test_pinball_convex_in_prediction(y, q, a, width):
    b = a + width
    f = lambda v: pinball_training_loss([y], [v], q).item()
    assert f((a + b) / 2) <= (f(a) + f(b)) / 2 + 1e-12


def test_pinball_multi_level_gradient():
    yq = Tensor(np.zeros((3, 2)), requires_grad=True)
    loss = pinball_training_loss(Tensor([1.0, -1.0, 2.0]), yq, [0.1, 0.9])
    T.backward(loss)
    # d/dyhat: -q when y > yhat, (1 - q) when y < yhat; averaged over 6 entries
    expected = np.array([[-0.1, -0.9], [0.9, 0.1], [-0.1, -0.9]]) / 6
    assert np.allclose(yq.grad, expected)
