"""Training objectives.

All functions take tensors or array-likes and return scalar
:class:`~solarcast.tensor.Tensor` values, so they can sit at the end of a
graph and be differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class GaussianPrediction:
    """Predictive mean and standard deviation per target step."""

    mean: Tensor
    std: Tensor

    def __post_init__(self):
        self.mean = T.as_tensor(self.mean)
        self.std = T.as_tensor(self.std)
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean {self.mean.shape} and std {self.std.shape} differ")


def _positive(x: Tensor, what: str) -> None:
    if np.any(np.asarray(x.data) <= 0):
        raise ContractError(f"{what} must be strictly positive")


def gaussian_nll(pred: GaussianPrediction, y) -> Tensor:
    """Negative log-density of ``y`` under ``N(mean, std^2)``, averaged over steps."""
    y = T.as_tensor(y)
    _positive(pred.std, "predictive std")
    if y.shape != pred.mean.shape:
        raise ShapeError(f"target shape {y.shape} does not match prediction {pred.mean.shape}")
    resid = T.square(y - pred.mean) / (2.0 * T.square(pred.std))
    per_step = T.log(pred.std) + resid + HALF_LOG_2PI
    return T.mean(per_step)


def kl_gaussian(mu_q, sigma_q, mu_p, sigma_p) -> Tensor:
    """Closed-form ``KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))`` summed over factors.

    ``log(sigma_p/sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2``
    """
    mu_q, sigma_q = T.as_tensor(mu_q), T.as_tensor(sigma_q)
    mu_p, sigma_p = T.as_tensor(mu_p), T.as_tensor(sigma_p)
    _positive(sigma_q, "posterior std")
    _positive(sigma_p, "prior std")
    var_p = T.square(sigma_p)
    terms = (
        T.log(sigma_p) - T.log(sigma_q)
        + (T.square(sigma_q) + T.square(mu_q - mu_p)) / (2.0 * var_p)
        - 0.5
    )
    return T.tensor_sum(terms)


@dataclass
class ElboReport:
    """Negative-ELBO decomposition; ``objective`` is the differentiable total."""

    nll: float
    kl: float
    kl_weight: float
    objective: Tensor

    @property
    def elbo_objective(self) -> float:
        return float(self.objective.data)


def elbo_loss(nll, kl, kl_weight: float = 1.0) -> ElboReport:
    """``nll + kl_weight * kl`` (the negative evidence lower bound to minimise)."""
    nll, kl = T.as_tensor(nll), T.as_tensor(kl)
    if float(kl.data) < -1e-9:
        raise ContractError(f"KL divergence cannot be negative (got {float(kl.data)})")
    objective = nll + kl * float(kl_weight)
    return ElboReport(float(nll.data), float(kl.data), float(kl_weight), objective)


def vae_loss(x, x_hat, mu_q, sigma_q, prior=None, kl_weight: float = 1.0) -> Tensor:
    """Reconstruction MSE plus the latent KL against ``prior``.

    The KL is summed over latent dimensions and averaged over the batch.
    ``kl_weight`` scales the KL term (1 gives the plain aggregated loss).
    """
    from .layers import PriorSpec

    prior = prior or PriorSpec()
    x, x_hat = T.as_tensor(x), T.as_tensor(x_hat)
    mu_q, sigma_q = T.as_tensor(mu_q), T.as_tensor(sigma_q)
    if x.shape != x_hat.shape:
        raise ShapeError(f"x {x.shape} and reconstruction {x_hat.shape} differ")
    if mu_q.shape != sigma_q.shape:
        raise ShapeError(f"mu_q {mu_q.shape} and sigma_q {sigma_q.shape} differ")
    batch = x.shape[0] if x.ndim == 2 else 1
    mse = T.mean(T.square(x - x_hat))
    kl = kl_gaussian(mu_q, sigma_q, prior.mu_z, prior.sigma_z_eps) * (1.0 / batch)
    return mse + kl * float(kl_weight)


def pinball_training_loss(y, y_hat_q, q) -> Tensor:
    """Quantile (pinball) loss averaged over entries.

    ``q`` is a scalar level or, for a (n, K) ``y_hat_q``, a vector of K levels;
    ``y`` is then broadcast across the K columns.
    """
    q_arr = np.asarray(q, dtype=np.float64)
    if np.any(q_arr <= 0) or np.any(q_arr >= 1):
        raise ContractError(f"quantile levels must lie in (0, 1), got {q}")
    y_hat_q = T.as_tensor(y_hat_q)
    y = T.as_tensor(y)
    if y_hat_q.ndim == 2 and y.ndim == 1:
        y = Tensor(np.repeat(y.data[:, None], y_hat_q.shape[1], axis=1))
    if y.shape != y_hat_q.shape:
        raise ShapeError(f"targets {y.shape} and quantile predictions {y_hat_q.shape} differ")
    r = y - y_hat_q
    return T.mean(r * Tensor(q_arr) + T.relu(-r))
