"""Forecasting networks and their scikit-learn style estimators.

:class:`ProbabilisticForecaster` covers every Bayesian model of the zoo
(recurrent or dense feature block, optional VAE front end, mean-field
Gaussian output head); :class:`QuantileRegressionForecaster` is the linear
pinball-loss baseline. :func:`build_model` maps a :class:`ModelConfig` id
(M1..M8) to a configured estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import tensor as T
from .errors import ConfigError, ContractError
from .layers import (
    BiLSTM,
    Dense,
    DenseVariational,
    Module,
    PriorSpec,
    Recurrent,
    VaeModel,
    dropout,
    vae_decode,
    vae_encode,
    vae_reparameterize,
)
from .losses import GaussianPrediction, elbo_loss, gaussian_nll, pinball_training_loss, vae_loss
from .tensor import RngState, Tensor
from .training import TrainConfig, TrainHistory, fit, fit_vae_then_bayesian

RECURRENT_KINDS = ("bilstm", "lstm", "rnn", "dense")
DECILES = tuple(round(0.1 * k, 1) for k in range(1, 10))
QR_LEVELS = (0.05, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9, 0.95)


# ---------------------------------------------------------------------------
# networks


class ForecasterNet(Module):
    """Feature block + mean-field Gaussian head emitting (mean, std) per window.

    Windows arrive as (batch, length) matrices; recurrent blocks read them as
    ``length`` steps of one feature each.
    """

    def __init__(self, kind: str, input_len: int, neurons: int = 48, dropout: float = 0.5,
                 variational_recurrent: bool = False, prior_sigma: float = 1.0,
                 trainable_prior: bool = False, rng: RngState | None = None):
        if kind not in RECURRENT_KINDS:
            raise ConfigError(f"unknown feature block {kind!r}")
        rng = rng or RngState(0)
        prior = dict(prior_sigma=prior_sigma, trainable_prior=trainable_prior)
        self.kind, self.input_len, self.neurons, self.rate = kind, input_len, neurons, dropout
        if kind == "bilstm":
            self.block = BiLSTM(1, neurons, rng, variational=variational_recurrent, **prior)
            width = 2 * neurons
        elif kind in ("lstm", "rnn"):
            self.block = Recurrent(1, neurons, kind, rng, variational=variational_recurrent, **prior)
            width = neurons
        else:
            self.block = Dense(input_len, neurons, rng)
            width = neurons
        self.variational_recurrent = variational_recurrent and kind != "dense"
        self.head = DenseVariational(width, 2, rng, **prior)
        self.latent_sampler = None

    def features(self, X, rng: RngState | None = None, mc: bool | None = None,
                 drop: bool | None = None):
        """Feature block output and its KL; ``drop`` overrides train-mode dropout."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "dense":
            out, kl = T.tanh(self.block(Tensor(X))), Tensor(0.0)
        else:
            out, kl = self.block(Tensor(X[:, :, None]), rng, mc)
        return dropout(out, self.rate, rng, self.training if drop is None else drop), kl

    def head_params(self, feats: Tensor, rng: RngState | None = None, mc: bool | None = None):
        out, kl = self.head(feats, rng, mc)
        return out[:, 0], T.softplus(out[:, 1]), kl

    def objective(self, X, y, rng, kl_weight: float) -> Tensor:
        if self.latent_sampler is not None:
            X = self.latent_sampler(X, rng if self.training else None)
        feats, kl_f = self.features(X, rng)
        mu, sigma, kl_h = self.head_params(feats, rng)
        nll = gaussian_nll(GaussianPrediction(mu, sigma), Tensor(y))
        return elbo_loss(nll, kl_f + kl_h, kl_weight).objective

    def sample_predictive(self, X, n_samples: int, rng: RngState, chunk: int = 1024,
                          mc_dropout: bool = False):
        """Per-sample predictive parameters, each of shape (n_samples, n_windows).

        Every sample draws head weights and, with ``mc_dropout``, a fresh
        dropout mask, so the predictive matches the noise seen in training.
        """
        self.eval()
        X = np.asarray(X, dtype=np.float64)
        mus = np.empty((n_samples, len(X)))
        sigmas = np.empty_like(mus)
        drop = mc_dropout and self.rate > 0
        with T.no_grad():
            if not self.variational_recurrent:
                feats = [self.features(X[lo:lo + chunk], drop=False)[0] for lo in range(0, len(X), chunk)]
                for s in range(n_samples):
                    W = self.head.kernel.sample(rng).data
                    b = self.head.bias.sample(rng).data
                    for k, F in enumerate(feats):
                        F = F.data
                        if drop:
                            F = F * ((rng.uniform(F.shape) >= self.rate) / (1.0 - self.rate))
                        out = F @ W + b
                        sl = slice(k * chunk, k * chunk + len(out))
                        mus[s, sl] = out[:, 0]
                        sigmas[s, sl] = T.softplus_np(out[:, 1])
            else:
                for s in range(n_samples):
                    F, _ = self.features(X, rng, mc=True, drop=drop)
                    mu, sigma, _ = self.head_params(F, rng, mc=True)
                    mus[s], sigmas[s] = mu.data, sigma.data
        return mus, sigmas


class VaeStage(VaeModel):
    """VAE with the training objective used for the compression stage."""

    def __init__(self, input_dim: int, latent_dim: int = 48, hidden: int = 64,
                 prior: PriorSpec | None = None, rng: RngState | None = None):
        super().__init__(input_dim, latent_dim, hidden, rng)
        self.prior = prior or PriorSpec()

    def objective(self, X, y, rng, kl_weight: float) -> Tensor:
        mu, sigma = vae_encode(self, Tensor(X))
        if self.training:
            z = vae_reparameterize(mu, sigma, rng)
            return vae_loss(Tensor(X), vae_decode(self, z), mu, sigma, self.prior, kl_weight)
        x_hat = vae_decode(self, mu)
        return T.mean(T.square(Tensor(X) - x_hat))

    def encode_mean(self, X) -> np.ndarray:
        with T.no_grad():
            return vae_encode(self, Tensor(np.asarray(X, dtype=np.float64)))[0].data

    def sample_latent(self, X, rng: RngState | None) -> np.ndarray:
        with T.no_grad():
            mu, sigma = vae_encode(self, Tensor(np.asarray(X, dtype=np.float64)))
        if rng is None:
            return mu.data
        return mu.data + sigma.data * rng.normal(mu.shape)

    def reconstruct(self, X) -> np.ndarray:
        with T.no_grad():
            return vae_decode(self, vae_encode(self, Tensor(np.asarray(X, dtype=np.float64)))[0]).data


class QuantileNet(Module):
    """Linear map from a lag window to one prediction per quantile level."""

    def __init__(self, input_len: int, levels, rng: RngState | None = None):
        self.levels = np.asarray(levels, dtype=np.float64)
        self.W = Tensor(np.zeros((input_len, len(levels))), requires_grad=True)
        self.b = Tensor(np.zeros(len(levels)), requires_grad=True)

    def __call__(self, X) -> Tensor:
        return Tensor(np.asarray(X, dtype=np.float64)) @ self.W + self.b

    def objective(self, X, y, rng, kl_weight: float) -> Tensor:
        return pinball_training_loss(Tensor(y), self(X), self.levels)


# ---------------------------------------------------------------------------
# estimators


def _train_config(est, **extra) -> TrainConfig:
    return TrainConfig(
        epochs=est.epochs, batch_size=est.batch_size, lr=est.lr, patience=est.patience,
        val_split=est.val_split, seed=est.random_state, **extra,
    )


class ProbabilisticForecaster(RegressorMixin, BaseEstimator):
    """Bayesian one-step-ahead forecaster with optional VAE window compression.

    Parameters
    ----------
    kind : {"bilstm", "lstm", "rnn", "dense"}, default="bilstm"
        Feature block placed before the variational output head.
    use_vae : bool, default=True
        Compress each window to ``latent_dims`` posterior means first; the
        feature block then reads the latent vector as a sequence.
    neurons : int, default=48
        Hidden units of the feature block (per direction for ``bilstm``).
    latent_dims : int, default=48
    vae_hidden : int, default=64
        Width of the single hidden layer on each side of the VAE.
    epochs, batch_size, lr, patience, val_split :
        Learning-loop settings shared by both stages.
    dropout : float, default=0.5
        Dropout on the features entering the output head.
    kl_weight : float or None, default=None
        Weight of the weight-posterior KL in the objective; ``None`` means
        ``1 / n_train``.
    vae_kl_weight : float, default=1e-3
        Weight of the latent KL in the VAE stage loss.
    prior_sigma : float, default=1.0
        Scale of the zero-mean Gaussian weight prior.
    trainable_prior : bool, default=False
    variational_recurrent : bool, default=False
        Also place mean-field posteriors on the recurrent weights.
    stochastic_z : bool, default=False
        Feed fresh latent draws to the forecaster while training instead of
        posterior means.
    mc_samples : int, default=100
        Weight samples used by :meth:`predict`.
    mc_dropout : bool, default=False
        Keep dropout active while sampling the predictive distribution.
    random_state : int, default=0
    """

    def __init__(self, kind="bilstm", use_vae=True, neurons=48, latent_dims=48, vae_hidden=64,
                 epochs=100, batch_size=128, lr=0.001, patience=20, val_split=0.2, dropout=0.5,
                 kl_weight=None, vae_kl_weight=1e-3, prior_sigma=1.0, trainable_prior=False,
                 variational_recurrent=False, stochastic_z=False, mc_samples=100, mc_dropout=False,
                 random_state=0):
        self.kind = kind
        self.use_vae = use_vae
        self.neurons = neurons
        self.latent_dims = latent_dims
        self.vae_hidden = vae_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.val_split = val_split
        self.dropout = dropout
        self.kl_weight = kl_weight
        self.vae_kl_weight = vae_kl_weight
        self.prior_sigma = prior_sigma
        self.trainable_prior = trainable_prior
        self.variational_recurrent = variational_recurrent
        self.stochastic_z = stochastic_z
        self.mc_samples = mc_samples
        self.mc_dropout = mc_dropout
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return _train_config(
            self, neurons=self.neurons, latent_dims=self.latent_dims, dropout=self.dropout,
            kl_weight=self.kl_weight, vae_kl_weight=self.vae_kl_weight, stochastic_z=self.stochastic_z,
        )

    def build(self, n_features: int, rng: RngState | None = None) -> "ProbabilisticForecaster":
        """Create fresh networks for windows of ``n_features`` lags."""
        if self.kind not in RECURRENT_KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}")
        rng = rng or RngState(self.random_state)
        vae_rng, net_rng = rng.spawn(2)
        self.n_features_in_ = int(n_features)
        self.vae_ = VaeStage(n_features, self.latent_dims, self.vae_hidden, rng=vae_rng) if self.use_vae else None
        width = self.latent_dims if self.use_vae else n_features
        self.net_ = ForecasterNet(
            self.kind, width, self.neurons, self.dropout, self.variational_recurrent,
            self.prior_sigma, self.trainable_prior, net_rng,
        )
        return self

    def fit(self, X, y, rng: RngState | None = None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        cfg = self.train_config()
        rng = rng or RngState(self.random_state)
        build_rng, fit_rng = rng.spawn(2)
        self.build(X.shape[1], build_rng)
        if self.use_vae:
            self.vae_history_, self.history_ = fit_vae_then_bayesian(self.vae_, self.net_, (X, y), cfg, fit_rng)
        else:
            self.vae_history_ = None
            self.history_ = fit(self.net_, (X, y), cfg, fit_rng)
        return self

    def _inputs(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} lags, got {X.shape[1]}")
        return self.vae_.encode_mean(X) if self.use_vae else X

    def sample_predictive(self, X, n_samples: int | None = None, rng: RngState | None = None):
        """Monte-Carlo predictive parameters ``(mu, sigma)``, each (n_samples, n)."""
        n_samples = n_samples or self.mc_samples
        rng = rng or RngState(self.random_state)
        X = self._inputs(X)
        return self.net_.sample_predictive(X, n_samples, rng, mc_dropout=self.mc_dropout)

    def predict(self, X):
        mus, _ = self.sample_predictive(X)
        return mus.mean(axis=0)

    def reconstruct(self, X) -> np.ndarray:
        """VAE reconstruction of the windows (only for ``use_vae=True``)."""
        check_is_fitted(self, "vae_")
        if self.vae_ is None:
            raise ContractError("this forecaster has no VAE stage")
        return self.vae_.reconstruct(check_array(X, dtype=np.float64))

    def count_params(self) -> tuple[int, int]:
        """(total, trainable). The VAE is frozen while forecasting, so it only counts in total."""
        check_is_fitted(self, "net_")
        total, trainable = self.net_.count_params()
        if self.vae_ is not None:
            total += self.vae_.count_params()[0]
        return total, trainable

    def modules_(self) -> dict[str, Module]:
        mods = {"net": self.net_}
        if self.vae_ is not None:
            mods["vae"] = self.vae_
        return mods


class QuantileRegressionForecaster(RegressorMixin, BaseEstimator):
    """Linear quantile regression on the lag window, fitted with pinball loss.

    ``predict`` returns the median; :meth:`predict_quantiles` returns one
    column per level (sorted per row, so quantiles never cross).
    """

    def __init__(self, quantiles=QR_LEVELS, epochs=100, batch_size=128, lr=0.01,
                 patience=20, val_split=0.2, random_state=0):
        self.quantiles = quantiles
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.val_split = val_split
        self.random_state = random_state

    def build(self, n_features: int, rng: RngState | None = None):
        levels = np.sort(np.asarray(self.quantiles, dtype=np.float64))
        if levels.size == 0 or levels[0] <= 0 or levels[-1] >= 1:
            raise ConfigError("quantile levels must be a non-empty subset of (0, 1)")
        self.levels_ = levels
        self.n_features_in_ = int(n_features)
        self.net_ = QuantileNet(n_features, levels)
        return self

    def fit(self, X, y, rng: RngState | None = None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.build(X.shape[1])
        self.vae_history_ = None
        self.history_ = fit(self.net_, (X, y), _train_config(self), rng or RngState(self.random_state))
        return self

    def predict_quantiles(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        with T.no_grad():
            out = self.net_(X).data
        return np.sort(out, axis=1)

    def predict(self, X):
        return self.quantile(X, 0.5)

    def quantile(self, X, level: float) -> np.ndarray:
        check_is_fitted(self, "net_")
        idx = np.flatnonzero(np.isclose(self.levels_, level))
        if idx.size == 0:
            raise ContractError(f"level {level} was not fitted (have {self.levels_.tolist()})")
        return self.predict_quantiles(X)[:, idx[0]]

    def count_params(self) -> tuple[int, int]:
        check_is_fitted(self, "net_")
        return self.net_.count_params()

    def modules_(self) -> dict[str, Module]:
        return {"net": self.net_}


class VaeCompressor(TransformerMixin, BaseEstimator):
    """Stand-alone VAE transformer: windows -> latent posterior means."""

    def __init__(self, latent_dims=48, hidden=64, epochs=100, batch_size=128, lr=0.001,
                 patience=20, val_split=0.2, kl_weight=1e-3, random_state=0):
        self.latent_dims = latent_dims
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.val_split = val_split
        self.kl_weight = kl_weight
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        rng = RngState(self.random_state)
        build_rng, fit_rng = rng.spawn(2)
        self.n_features_in_ = X.shape[1]
        self.vae_ = VaeStage(X.shape[1], self.latent_dims, self.hidden, rng=build_rng)
        self.history_ = fit(self.vae_, (X, None), _train_config(self), fit_rng, kl_weight=self.kl_weight)
        return self

    def transform(self, X):
        check_is_fitted(self, "vae_")
        return self.vae_.encode_mean(check_array(X, dtype=np.float64))

    def inverse_transform(self, Z):
        check_is_fitted(self, "vae_")
        with T.no_grad():
            return vae_decode(self.vae_, Tensor(check_array(Z, dtype=np.float64))).data


# ---------------------------------------------------------------------------
# model zoo

MODEL_ZOO = {
    "M1": ("bilstm", True, "VAE-Bayesian BiLSTM"),
    "M2": ("bilstm", False, "Bayesian BiLSTM"),
    "M3": ("lstm", True, "VAE-Bayesian LSTM"),
    "M4": ("lstm", False, "Bayesian LSTM"),
    "M5": ("rnn", True, "VAE-Bayesian RNN"),
    "M6": ("rnn", False, "Bayesian RNN"),
    "M7": ("dense", False, "Bayesian ANN"),
    "M8": ("quantile_regression", False, "Quantile regression"),
}


@dataclass(frozen=True)
class ModelConfig:
    id: str
    recurrent_kind: str
    use_vae: bool
    neurons: int = 48
    lags: int = 96
    latent: int = 48

    def __post_init__(self):
        key = self.id.upper()
        if key not in MODEL_ZOO:
            raise ContractError(f"unknown model id {self.id!r}")
        kind, vae, _ = MODEL_ZOO[key]
        if (self.recurrent_kind, self.use_vae) != (kind, vae):
            raise ContractError(
                f"{key} is ({kind}, vae={vae}), not ({self.recurrent_kind}, vae={self.use_vae})"
            )
        if min(self.neurons, self.lags, self.latent) < 1:
            raise ContractError("neurons, lags and latent must be positive")

    @classmethod
    def from_id(cls, model_id: str, **kw) -> "ModelConfig":
        key = model_id.upper()
        if key not in MODEL_ZOO:
            raise ConfigError(f"unknown model id {model_id!r}; choose from {sorted(MODEL_ZOO)}")
        kind, vae, _ = MODEL_ZOO[key]
        return cls(key, kind, vae, **kw)

    @property
    def label(self) -> str:
        return MODEL_ZOO[self.id.upper()][2]


def build_model(cfg: ModelConfig, train: TrainConfig | None = None, seed: int | None = None):
    """Configured and built (untrained) estimator for a zoo entry."""
    train = train or TrainConfig(neurons=cfg.neurons, lags=cfg.lags, latent_dims=cfg.latent)
    seed = train.seed if seed is None else seed
    common = dict(epochs=train.epochs, batch_size=train.batch_size, patience=train.patience,
                  val_split=train.val_split, random_state=seed)
    if cfg.recurrent_kind == "quantile_regression":
        model = QuantileRegressionForecaster(**common)
    else:
        model = ProbabilisticForecaster(
            kind=cfg.recurrent_kind, use_vae=cfg.use_vae, neurons=cfg.neurons, latent_dims=cfg.latent,
            lr=train.lr, dropout=train.dropout, kl_weight=train.kl_weight,
            vae_kl_weight=train.vae_kl_weight, stochastic_z=train.stochastic_z, **common,
        )
    return model.build(cfg.lags)


def count_params(model) -> tuple[int, int]:
    """(total, trainable) scalar parameter counts of a module or built estimator."""
    return model.count_params()
