"""Learning loop: Adam, minibatching, chronological validation split, early
stopping with best-epoch restoration, the two-stage VAE + forecaster fit, and
grid search."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError, TrainingDivergence
from .tensor import RngState, Tensor

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyper-parameters; defaults give the full-size reference configuration."""

    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.001
    patience: int = 20
    val_split: float = 0.2
    neurons: int = 48
    lags: int = 96
    latent_dims: int = 48
    dropout: float = 0.5
    seed: int = 0
    kl_weight: float | None = None
    vae_kl_weight: float = 1e-3
    clip_norm: float = 5.0
    stochastic_z: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> "TrainConfig":
        if not 0.0 < self.val_split < 1.0:
            raise ConfigError(f"val_split must lie in (0, 1), got {self.val_split}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.patience > self.epochs:
            raise ConfigError(f"patience ({self.patience}) exceeds epochs ({self.epochs})")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        return self

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TrainHistory:
    """Per-epoch record of one fit. Epochs are numbered from 1."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else math.nan

    @property
    def total_seconds(self) -> float:
        return float(sum(self.seconds))

    def losses(self) -> tuple:
        """Timing-free view used for reproducibility comparisons."""
        return tuple(self.train_loss), tuple(self.val_loss), self.stopped_epoch, self.best_epoch

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
                writer.writerow([i, *(f"{v:.10g}" for v in row)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                hist.train_loss.append(float(row["train_loss"]))
                hist.val_loss.append(float(row["val_loss"]))
                hist.seconds.append(float(row["seconds"]))
        hist.stopped_epoch = len(hist.val_loss)
        if hist.val_loss:
            hist.best_epoch = int(np.nanargmin(hist.val_loss)) + 1
        return hist


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> Sequence[Tensor]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# early stopping


class EarlyStopping:
    """Stop once the monitored loss fails to improve for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Feed the loss of ``epoch``; returns ``(improved, should_stop)``."""
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


# ---------------------------------------------------------------------------
# fit


def _split_xy(dataset):
    if hasattr(dataset, "X"):
        return np.asarray(dataset.X, dtype=np.float64), (
            None if getattr(dataset, "y", None) is None else np.asarray(dataset.y, dtype=np.float64)
        )
    X, y = dataset
    return np.asarray(X, dtype=np.float64), None if y is None else np.asarray(y, dtype=np.float64)


def chronological_split(n: int, val_split: float) -> int:
    """Number of leading rows kept for training; the remainder validates."""
    n_val = max(1, int(round(n * val_split)))
    return n - n_val


def fit(model, dataset, cfg: TrainConfig, rng: RngState | None = None,
        kl_weight: float | None = None, on_epoch: Callable | None = None) -> TrainHistory:
    """Train ``model`` by minibatch Adam with early stopping.

    ``model`` exposes ``parameters()``, ``train()``/``eval()`` and
    ``objective(X, y, rng, kl_weight) -> Tensor``. ``dataset`` is a
    ``WindowedDataset`` or an ``(X, y)`` pair (``y`` may be ``None`` for
    unsupervised stages). The last ``val_split`` fraction of rows, in time
    order, is held out for validation; the parameters of the best validation
    epoch are restored before returning.
    """
    rng = rng or RngState(cfg.seed)
    X, y = _split_xy(dataset)
    if y is not None and len(y) != len(X):
        raise ShapeError(f"{len(X)} windows but {len(y)} targets")
    n_train = chronological_split(len(X), cfg.val_split)
    if n_train < cfg.batch_size:
        raise ContractError(
            f"training portion has {n_train} rows, fewer than one batch of {cfg.batch_size}"
        )
    Xt, Xv = X[:n_train], X[n_train:]
    yt = yv = None
    if y is not None:
        yt, yv = y[:n_train], y[n_train:]
    if kl_weight is None:
        kl_weight = cfg.kl_weight if cfg.kl_weight is not None else 1.0 / n_train

    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_state = [p.data.copy() for p in params]

    def objective(*args):
        try:
            return model.objective(*args)
        except ContractError as exc:
            if state.t == 0:
                raise
            # only reachable once updates have pushed a scale to zero
            raise TrainingDivergence(f"degenerate parameters at epoch {epoch}: {exc}") from exc

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        model.train()
        order = rng.permutation(n_train)
        total, count = 0.0, 0
        for lo in range(0, n_train, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            T.zero_grad(params)
            loss = objective(Xt[idx], None if yt is None else yt[idx], rng, kl_weight)
            value = float(loss.data)
            if not math.isfinite(value):
                history.stopped_epoch = epoch
                raise TrainingDivergence(f"non-finite training loss at epoch {epoch}")
            T.backward(loss)
            grads = [p.grad for p in params]
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(state, params, grads)
            total += value * len(idx)
            count += len(idx)
        model.eval()
        with T.no_grad():
            val = float(objective(Xv, yv, None, kl_weight).data)
        history.train_loss.append(total / count)
        history.val_loss.append(val)
        history.seconds.append(time.perf_counter() - start)
        history.stopped_epoch = epoch
        if not math.isfinite(val):
            raise TrainingDivergence(f"non-finite validation loss at epoch {epoch}")
        improved, stop = stopper.update(epoch, val)
        if improved:
            best_state = [p.data.copy() for p in params]
        logger.debug("epoch %d train %.6f val %.6f", epoch, history.train_loss[-1], val)
        if on_epoch is not None:
            on_epoch(epoch, history)
        if stop:
            break

    for p, data in zip(params, best_state):
        p.data = data
    history.best_epoch = stopper.best_epoch
    model.eval()
    return history


def fit_vae_then_bayesian(vae, forecaster, dataset, cfg: TrainConfig, rng: RngState | None = None):
    """Two-stage training: the VAE on input windows, then the forecaster on latents.

    ``vae`` and ``forecaster`` are trainable modules (see :func:`fit`);
    ``vae`` must also provide ``encode_mean(X) -> ndarray``. The encoder is
    frozen after stage one and every window is mapped to its posterior mean.
    With ``cfg.stochastic_z`` the forecaster instead sees a fresh posterior
    draw of each window's latent code every epoch.
    """
    rng = rng or RngState(cfg.seed)
    vae_rng, fc_rng = rng.spawn(2)
    X, y = _split_xy(dataset)
    vae_history = fit(vae, (X, None), cfg, vae_rng, kl_weight=cfg.vae_kl_weight)
    vae.freeze()
    if cfg.stochastic_z:
        forecaster.latent_sampler = vae.sample_latent
        Z = X
    else:
        Z = vae.encode_mean(X)
    fc_history = fit(forecaster, (Z, y), cfg, fc_rng)
    return vae_history, fc_history


# ---------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    best_config: TrainConfig
    table: list[dict[str, Any]]


def grid_search(space: dict[str, Sequence], dataset, cfg: TrainConfig,
                model_factory: Callable[[TrainConfig], Any]) -> GridResult:
    """Exhaustively score every combination of ``space`` by best validation loss.

    ``model_factory(cfg)`` returns an estimator with ``fit(X, y, rng=...)``
    (which sets ``history_``) and ``count_params()``.
    Divergent candidates score ``nan`` and rank last; ties prefer fewer
    parameters, then the lower learning rate.
    """
    if not space or any(len(v) == 0 for v in space.values()):
        raise ContractError("grid search needs a non-empty space")
    X, y = _split_xy(dataset)
    keys = list(space)
    combos = list(itertools.product(*(space[k] for k in keys)))
    seeds = RngState(cfg.seed).spawn(len(combos))
    table = []
    for i, values in enumerate(combos):
        overrides = dict(zip(keys, values))
        try:
            cand = replace(cfg, **overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        model = model_factory(cand)
        try:
            score = model.fit(X, y, rng=seeds[i]).history_.best_val_loss
        except TrainingDivergence:
            score = math.nan
        table.append({**overrides, "score": score, "params": model.count_params()[1], "index": i})

    def rank(row):
        bad = not math.isfinite(row["score"])
        return (bad, row["score"] if not bad else 0.0, row["params"], row.get("lr", cfg.lr), row["index"])

    table.sort(key=rank)
    best = {k: table[0][k] for k in keys}
    return GridResult(best_config=replace(cfg, **best), table=table)
