"""Neural building blocks: recurrent cells, dense and mean-field variational
layers, dropout and the VAE used to compress lag windows.

Parameters live on :class:`Module` subclasses as :class:`~solarcast.tensor.Tensor`
attributes; the functional forms (``lstm_cell_forward``, ``bilstm_forward``,
...) operate on plain tensors so they can be gradient-checked in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .losses import kl_gaussian
from .tensor import RngState, Tensor


class Module:
    """Minimal parameter container with train/eval switching."""

    training: bool = True

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{name}.{i}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        return self.named_tensors(prefix)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_tensors() if p.requires_grad]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        """Stop gradient flow into every tensor of this module."""
        for _, t in self.named_tensors():
            t.requires_grad = False
            t.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        if missing:
            raise ContractError(f"state is missing tensors: {sorted(missing)}")
        for name, t in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.copy()

    def count_params(self) -> tuple[int, int]:
        """(total scalar values, trainable scalar values)."""
        tensors = [t for _, t in self.named_tensors()]
        total = sum(t.size for t in tensors)
        trainable = sum(t.size for t in tensors if t.requires_grad)
        return total, trainable


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _glorot(rng: RngState, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0) * limit


# ---------------------------------------------------------------------------
# dense


class Dense(Module):
    """Affine map ``x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: RngState | None = None):
        rng = rng or RngState(0)
        self.n_in, self.n_out = n_in, n_out
        self.W = _param(_glorot(rng, n_in, n_out, (n_in, n_out)))
        self.b = _param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects {self.n_in} input features, got shape {x.shape}")
        if x.ndim == 1:
            return T.reshape(T.reshape(x, (1, -1)) @ self.W + self.b, (self.n_out,))
        return x @ self.W + self.b


# ---------------------------------------------------------------------------
# mean-field Gaussian weights


class GaussianVariational(Module):
    """Factorised Gaussian posterior ``N(mu, softplus(rho)^2)`` over one weight tensor.

    The prior is ``N(prior_mu, prior_sigma^2)``; with ``trainable_prior`` its
    mean and log-scale become parameters too.
    """

    def __init__(
        self,
        shape,
        rng: RngState | None = None,
        prior_mu: float = 0.0,
        prior_sigma: float = 1.0,
        trainable_prior: bool = False,
        init_mu_std: float = 0.1,
        init_sigma: float = 0.05,
    ):
        if prior_sigma <= 0:
            raise ContractError("prior_sigma must be positive")
        rng = rng or RngState(0)
        self.shape = tuple(shape)
        self.mu = _param(rng.normal(self.shape) * init_mu_std)
        self.rho = _param(np.full(self.shape, float(T.inverse_softplus_np(init_sigma))))
        self.trainable_prior = trainable_prior
        if trainable_prior:
            self.prior_mu = _param(np.asarray(prior_mu, dtype=float))
            self.prior_log_sigma = _param(np.asarray(np.log(prior_sigma)))
        else:
            self._prior = (float(prior_mu), float(prior_sigma))

    @property
    def sigma(self) -> Tensor:
        return T.softplus(self.rho)

    def prior(self) -> tuple:
        if self.trainable_prior:
            return self.prior_mu, T.exp(self.prior_log_sigma)
        return self._prior

    def sample(self, rng: RngState) -> Tensor:
        eps = T.gaussian_draw(rng, self.shape)
        return self.mu + self.sigma * eps

    def kl(self) -> Tensor:
        mu_p, sigma_p = self.prior()
        return kl_gaussian(self.mu, self.sigma, mu_p, sigma_p)

    def weight(self, rng: RngState | None, mc: bool) -> Tensor:
        if mc:
            if rng is None:
                raise ContractError("a random state is required to sample weights")
            return self.sample(rng)
        return self.mu


class DenseVariational(Module):
    """Dense layer whose kernel and bias are mean-field Gaussian."""

    def __init__(self, n_in: int, n_out: int, rng: RngState | None = None, **prior_kw):
        rng = rng or RngState(0)
        self.n_in, self.n_out = n_in, n_out
        self.kernel = GaussianVariational((n_in, n_out), rng, **prior_kw)
        self.bias = GaussianVariational((n_out,), rng, **prior_kw)

    def __call__(self, x: Tensor, rng: RngState | None = None, mc: bool | None = None):
        return variational_forward(self, x, rng, mc)


def variational_forward(layer: DenseVariational, x, rng: RngState | None = None, mc: bool | None = None):
    """Sample ``w = mu + softplus(rho) * eps`` and apply the affine map.

    Returns ``(y, kl)`` where ``kl`` is the closed-form divergence of the
    weight posterior from its prior. ``mc`` defaults to the layer's training
    flag; with ``mc=False`` the posterior means are used.
    """
    x = T.as_tensor(x)
    if mc is None:
        mc = layer.training
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"DenseVariational expects {layer.n_in} features, got shape {x.shape}")
    W = layer.kernel.weight(rng, mc)
    b = layer.bias.weight(rng, mc)
    kl = layer.kernel.kl() + layer.bias.kl()
    if x.ndim == 1:
        y = T.reshape(T.reshape(x, (1, -1)) @ W + b, (layer.n_out,))
    else:
        y = x @ W + b
    return y, kl


# ---------------------------------------------------------------------------
# recurrent cells


class LSTMCell(Module):
    """Standard LSTM cell; gates stacked in the order (i, f, g, o).

    ``W`` is (4H, I), ``U`` is (4H, H) and ``b`` is (4H,). With
    ``variational=True`` each of them becomes a :class:`GaussianVariational`.
    """

    gates = 4

    def __init__(self, n_in: int, hidden: int, rng: RngState | None = None,
                 variational: bool = False, **prior_kw):
        rng = rng or RngState(0)
        self.n_in, self.hidden = n_in, hidden
        g = self.gates * hidden
        W = _glorot(rng, n_in, g, (g, n_in))
        U = rng.normal((g, hidden)) / np.sqrt(hidden)
        b = np.zeros(g)
        if self.gates == 4:
            b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.variational = variational
        if variational:
            self.W = GaussianVariational(W.shape, rng, **prior_kw)
            self.U = GaussianVariational(U.shape, rng, **prior_kw)
            self.b = GaussianVariational(b.shape, rng, **prior_kw)
            self.W.mu.data, self.U.mu.data, self.b.mu.data = W, U, b
        else:
            self.W, self.U, self.b = _param(W), _param(U), _param(b)

    def weights(self, rng: RngState | None = None, mc: bool | None = None):
        """Concrete (W, U, b) for one pass plus their KL (0 when deterministic)."""
        if not self.variational:
            return (self.W, self.U, self.b), Tensor(0.0)
        mc = self.training if mc is None else mc
        ws = tuple(p.weight(rng, mc) for p in (self.W, self.U, self.b))
        kl = self.W.kl() + self.U.kl() + self.b.kl()
        return ws, kl

    def step(self, weights, x, state):
        return lstm_cell_forward(weights, x, state)


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 1:
        return T.reshape(x, (1, -1)), True
    return x, False


def lstm_cell_forward(params, x_t, state):
    """One LSTM step.

    ``params`` is ``(W, U, b)`` (or an :class:`LSTMCell`); ``x_t`` is (I,) or
    (B, I); ``state`` is ``(h, c)`` with matching leading shape.
    """
    if isinstance(params, LSTMCell):
        params = params.weights(mc=False)[0]
    W, U, b = params
    x_t, h, c = T.as_tensor(x_t), T.as_tensor(state[0]), T.as_tensor(state[1])
    H = U.shape[1]
    if W.shape != (4 * H, x_t.shape[-1]) or h.shape[-1] != H or c.shape != h.shape:
        raise ShapeError(
            f"lstm cell: W {W.shape}, U {U.shape}, x {x_t.shape}, h {h.shape}, c {c.shape} are inconsistent"
        )
    x_t, squeeze = _as_batch(x_t)
    h, _ = _as_batch(h)
    c, _ = _as_batch(c)
    z = x_t @ W.T + h @ U.T + b
    i = T.sigmoid(z[:, :H])
    f = T.sigmoid(z[:, H:2 * H])
    g = T.tanh(z[:, 2 * H:3 * H])
    o = T.sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    if squeeze:
        return T.reshape(h_new, (H,)), T.reshape(c_new, (H,))
    return h_new, c_new


class RNNCell(Module):
    """Elman cell ``h' = tanh(x W^T + h U^T + b)``."""

    def __init__(self, n_in: int, hidden: int, rng: RngState | None = None,
                 variational: bool = False, **prior_kw):
        rng = rng or RngState(0)
        self.n_in, self.hidden = n_in, hidden
        W = _glorot(rng, n_in, hidden, (hidden, n_in))
        U = rng.normal((hidden, hidden)) / np.sqrt(hidden)
        self.variational = variational
        if variational:
            self.W = GaussianVariational(W.shape, rng, **prior_kw)
            self.U = GaussianVariational(U.shape, rng, **prior_kw)
            self.b = GaussianVariational((hidden,), rng, **prior_kw)
            self.W.mu.data, self.U.mu.data = W, U
            self.b.mu.data = np.zeros(hidden)
        else:
            self.W, self.U, self.b = _param(W), _param(U), _param(np.zeros(hidden))

    weights = LSTMCell.weights

    def step(self, weights, x, state):
        W, U, b = weights
        h = T.tanh(x @ W.T + state[0] @ U.T + b)
        return h, None


def _steps(seq: Tensor):
    """Yield (B, I) slices of a (B, T, I) tensor; constants are sliced without graph nodes."""
    n_steps = seq.shape[1]
    for t in range(n_steps):
        if seq.requires_grad:
            yield seq[:, t, :]
        else:
            yield Tensor(seq.data[:, t, :])


def _run(cell, seq: Tensor, rng=None, mc=None, reverse: bool = False, keep_all: bool = False):
    """Run ``cell`` over the time axis.

    Returns the per-step hidden states in time order when ``keep_all``,
    otherwise only the state after the last processed step.
    """
    weights, kl = cell.weights(rng, mc)
    B, H = seq.shape[0], cell.hidden
    xs = list(_steps(seq))
    if reverse:
        xs = xs[::-1]
    states = []
    if isinstance(cell, LSTMCell):
        hc = Tensor(np.zeros((B, 2 * H)))
        for x in xs:
            hc = T.lstm_step(x, hc, *weights)
            states.append(hc)
        pick = (lambda s: s[:, :H])
    else:
        h = Tensor(np.zeros((B, H)))
        for x in xs:
            h, _ = cell.step(weights, x, (h, None))
            states.append(h)
        pick = (lambda s: s)
    if not keep_all:
        return pick(states[-1]), kl
    outputs = [pick(s) for s in states]
    if reverse:
        outputs = outputs[::-1]
    return outputs, kl


def _check_seq(seq: Tensor) -> Tensor:
    seq = T.as_tensor(seq)
    if seq.ndim != 3:
        raise ShapeError(f"recurrent layers expect (batch, time, features), got {seq.shape}")
    if seq.shape[1] < 1:
        raise ContractError("empty sequence")
    return seq


class Recurrent(Module):
    """Unidirectional LSTM or Elman layer over (batch, time, features)."""

    def __init__(self, n_in: int, hidden: int, kind: str = "lstm", rng: RngState | None = None,
                 variational: bool = False, **prior_kw):
        cls = {"lstm": LSTMCell, "rnn": RNNCell}[kind]
        self.kind = kind
        self.hidden = hidden
        self.cell = cls(n_in, hidden, rng, variational=variational, **prior_kw)

    def __call__(self, seq, rng=None, mc=None, return_sequences: bool = False):
        seq = _check_seq(seq)
        out, kl = _run(self.cell, seq, rng, mc, keep_all=return_sequences)
        return (_stack(out) if return_sequences else out), kl


class BiLSTM(Module):
    """Bidirectional LSTM; each output row is ``[h_forward(t), h_backward(t)]``."""

    def __init__(self, n_in: int, hidden: int, rng: RngState | None = None,
                 variational: bool = False, **prior_kw):
        rng = rng or RngState(0)
        self.hidden = hidden
        self.fwd = LSTMCell(n_in, hidden, rng, variational=variational, **prior_kw)
        self.bwd = LSTMCell(n_in, hidden, rng, variational=variational, **prior_kw)

    def __call__(self, seq, rng=None, mc=None, return_sequences: bool = False):
        seq = _check_seq(seq)
        out_f, kl_f = _run(self.fwd, seq, rng, mc, keep_all=return_sequences)
        out_b, kl_b = _run(self.bwd, seq, rng, mc, reverse=True, keep_all=return_sequences)
        kl = kl_f + kl_b
        if return_sequences:
            return _stack([T.concat([f, b], axis=1) for f, b in zip(out_f, out_b)]), kl
        # final state of each direction (forward after t=T-1, backward after t=0)
        return T.concat([out_f, out_b], axis=1), kl


def _stack(rows: list[Tensor]) -> Tensor:
    B, W = rows[0].shape
    return T.concat([T.reshape(r, (B, 1, W)) for r in rows], axis=1)


def bilstm_forward(fwd, bwd, seq) -> Tensor:
    """Run a (T, I) sequence through both directions; returns (T, 2H).

    ``fwd``/``bwd`` are :class:`LSTMCell` instances or ``(W, U, b)`` tuples.
    """
    seq = T.as_tensor(seq)
    if seq.ndim != 2:
        raise ShapeError(f"bilstm_forward expects (time, features), got {seq.shape}")
    if seq.shape[0] < 1:
        raise ContractError("empty sequence")
    pf = fwd.weights(mc=False)[0] if isinstance(fwd, LSTMCell) else fwd
    pb = bwd.weights(mc=False)[0] if isinstance(bwd, LSTMCell) else bwd
    H = pf[1].shape[1]
    n_steps = seq.shape[0]
    rows = [seq[t] for t in range(n_steps)] if seq.requires_grad else [Tensor(r) for r in seq.data]

    def run(params, order):
        h, c = Tensor(np.zeros(H)), Tensor(np.zeros(H))
        out = {}
        for t in order:
            h, c = lstm_cell_forward(params, rows[t], (h, c))
            out[t] = h
        return out

    hf = run(pf, range(n_steps))
    hb = run(pb, range(n_steps - 1, -1, -1))
    stacked = [T.reshape(T.concat([hf[t], hb[t]], axis=0), (1, 2 * H)) for t in range(n_steps)]
    return T.concat(stacked, axis=0)


# ---------------------------------------------------------------------------
# dropout


def dropout(x, rate: float, rng: RngState | None, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    x = T.as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random state")
    keep = (rng.uniform(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


# ---------------------------------------------------------------------------
# variational autoencoder


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``N(mu_z, sigma_z_eps^2)`` on each latent coordinate."""

    mu_z: float = 0.0
    sigma_z_eps: float = 1.0

    def __post_init__(self):
        if self.sigma_z_eps <= 0:
            raise ContractError("sigma_z_eps must be positive")


class VaeModel(Module):
    """Encoder ``L -> hidden -> (mu_q, rho_q)`` and decoder ``d_z -> hidden -> L``.

    Both hidden layers use tanh; the decoder output is tanh-bounded to match
    data scaled into (-1, 1).
    """

    def __init__(self, input_dim: int, latent_dim: int = 48, hidden: int = 64,
                 rng: RngState | None = None):
        rng = rng or RngState(0)
        self.input_dim, self.latent_dim, self.hidden = input_dim, latent_dim, hidden
        self.enc_hidden = Dense(input_dim, hidden, rng)
        self.enc_mu = Dense(hidden, latent_dim, rng)
        self.enc_rho = Dense(hidden, latent_dim, rng)
        self.dec_hidden = Dense(latent_dim, hidden, rng)
        self.dec_out = Dense(hidden, input_dim, rng)

    def encode(self, x):
        return vae_encode(self, x)

    def decode(self, z):
        return vae_decode(self, z)


def vae_encode(vae: VaeModel, x):
    """Approximate posterior parameters ``(mu_q, sigma_q)`` with ``sigma_q = softplus(rho_q)``."""
    x = T.as_tensor(x)
    if x.shape[-1] != vae.input_dim:
        raise ShapeError(f"VAE expects windows of length {vae.input_dim}, got shape {x.shape}")
    h = T.tanh(vae.enc_hidden(x))
    return vae.enc_mu(h), T.softplus(vae.enc_rho(h))


def vae_reparameterize(mu_q, sigma_q, rng: RngState | None = None, eps=None) -> Tensor:
    """``z = mu_q + sigma_q * eps``; ``eps`` is a constant standard-normal draw."""
    mu_q, sigma_q = T.as_tensor(mu_q), T.as_tensor(sigma_q)
    if mu_q.shape != sigma_q.shape:
        raise ShapeError(f"mu {mu_q.shape} and sigma {sigma_q.shape} differ")
    if eps is None:
        if rng is None:
            raise ContractError("either rng or eps must be given")
        eps = T.gaussian_draw(rng, mu_q.shape)
    return mu_q + sigma_q * T.as_tensor(eps)


def vae_decode(vae: VaeModel, z) -> Tensor:
    z = T.as_tensor(z)
    if z.shape[-1] != vae.latent_dim:
        raise ShapeError(f"VAE decoder expects {vae.latent_dim} latent values, got shape {z.shape}")
    return T.tanh(vae.dec_out(T.tanh(vae.dec_hidden(z))))
