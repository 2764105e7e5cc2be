import math

import numpy as np
import pytest

from solarcast import tensor as T
from solarcast.errors import ConfigError, ContractError, TrainingDivergence
from solarcast.layers import Dense, Module
from solarcast.models import ProbabilisticForecaster, VaeStage
from solarcast.synthetic import sinusoid
from solarcast.tensor import RngState, Tensor
from solarcast.training import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    TrainHistory,
    adam_step,
    chronological_split,
    clip_global_norm,
    fit,
    grid_search,
)


class LinearToy(Module):
    """dense(1->1) regression with squared loss."""

    def __init__(self, seed=0):
        self.d = Dense(1, 1, RngState(seed))

    def objective(self, X, y, rng, kl_weight):
        return T.mean(T.square(T.reshape(self.d(Tensor(X)), (len(X),)) - Tensor(y)))


def test_adam_zero_gradient_first_step():
    p = Tensor([1.0, -2.0], requires_grad=True)
    adam_step(AdamState(), [p], [np.zeros(2)])
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_hand_value():
    p = Tensor([0.0], requires_grad=True)
    st = AdamState(lr=0.001)
    adam_step(st, [p], [np.ones(1)])
    # m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
    assert st.t == 1


def test_adam_matches_reference_recursion(rng):
    grads = rng.normal(size=(5, 3))
    p = Tensor(np.zeros(3), requires_grad=True)
    st = AdamState(lr=0.01)
    ref, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        adam_step(st, [p], [g.copy()])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, ref, atol=1e-15)


def test_adam_shape_mismatch():
    with pytest.raises(ContractError):
        adam_step(AdamState(), [Tensor(np.zeros(2), requires_grad=True)], [np.zeros(3)])


def test_clip_global_norm():
    gs = [np.array([3.0]), np.array([4.0])]
    assert clip_global_norm(gs, 1.0) == 5.0
    assert np.sqrt(sum((g ** 2).sum() for g in gs)) == pytest.approx(1.0)


def test_early_stopping_patience_semantics():
    es = EarlyStopping(20)
    losses = [1.0] + [1.0 + 0.01 * k for k in range(20)]
    stops = [es.update(e, l)[1] for e, l in enumerate(losses, start=1)]
    assert stops.index(True) + 1 == 21 and es.best_epoch == 1


def test_patience_equal_to_epochs_never_stops_early():
    model = LinearToy()
    X = np.linspace(-1, 1, 200)[:, None]
    hist = fit(model, (X, 2 * X[:, 0]), TrainConfig(epochs=5, patience=5, batch_size=16, lr=1e-9), RngState(0))
    assert hist.stopped_epoch == 5


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(val_split=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=5, patience=6)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochz": 3})
    assert TrainConfig.from_dict(TrainConfig(lr=0.01).to_dict()) == TrainConfig(lr=0.01)


def test_linear_toy_converges():
    model = LinearToy()
    X = np.random.default_rng(0).uniform(-1, 1, size=(640, 1))
    cfg = TrainConfig(epochs=100, patience=100, batch_size=64, lr=0.05)
    fit(model, (X, 2 * X[:, 0]), cfg, RngState(0))  # 8 steps/epoch, 800 steps
    assert abs(model.d.W.data[0, 0] - 2.0) < 0.01


def test_best_epoch_restored():
    model = LinearToy()
    X = np.random.default_rng(0).uniform(-1, 1, size=(300, 1))
    y = 2 * X[:, 0] + np.random.default_rng(1).normal(scale=0.3, size=300)
    hist = fit(model, (X, y), TrainConfig(epochs=30, patience=5, batch_size=32, lr=0.3), RngState(0))
    model.eval()
    n_tr = chronological_split(300, 0.2)
    with T.no_grad():
        val = model.objective(X[n_tr:], y[n_tr:], None, 0.0).item()
    assert val == pytest.approx(min(hist.val_loss), abs=1e-12)
    assert hist.val_loss[hist.best_epoch - 1] == min(hist.val_loss)


def test_too_small_dataset():
    with pytest.raises(ContractError):
        fit(LinearToy(), (np.zeros((10, 1)), np.zeros(10)), TrainConfig(batch_size=128), RngState(0))


def test_divergence_raises():
    model = LinearToy()
    model.d.W.data[:] = np.inf
    X = np.ones((100, 1))
    with pytest.raises(TrainingDivergence):
        fit(model, (X, X[:, 0]), TrainConfig(epochs=2, patience=1, batch_size=10), RngState(0))


def test_validation_is_chronological_tail():
    assert chronological_split(100, 0.2) == 80
    seen = []

    class Spy(LinearToy):
        def objective(self, X, y, rng, kl_weight):
            if not self.training:
                seen.append(X[:, 0].copy())
            return super().objective(X, y, rng, kl_weight)

    X = np.arange(100.0)[:, None] / 100
    fit(Spy(), (X, X[:, 0]), TrainConfig(epochs=1, patience=1, batch_size=10), RngState(0))
    assert np.array_equal(seen[0], X[80:, 0])


def _forecaster(**kw):
    base = dict(kind="lstm", use_vae=True, neurons=4, latent_dims=3, vae_hidden=8, epochs=3,
                patience=3, batch_size=32, lr=0.01)
    base.update(kw)
    return ProbabilisticForecaster(**base)


def _windows(n=300, L=12):
    y = sinusoid(n + L, period=24)
    X = np.lib.stride_tricks.sliding_window_view(y, L)[:-1]
    return X, y[L:]


def test_same_seed_bit_identical_histories():
    X, y = _windows()
    a = _forecaster().fit(X, y, rng=RngState(3))
    b = _forecaster().fit(X, y, rng=RngState(3))
    assert a.history_.losses() == b.history_.losses()
    assert a.vae_history_.losses() == b.vae_history_.losses()


def test_two_stage_freezes_vae_and_feeds_latents():
    X, y = _windows()
    m = _forecaster().fit(X, y)
    assert m.vae_.parameters() == []
    assert m.net_.input_len == 3
    assert m._inputs(X).shape == (len(X), 3)


def test_stochastic_z_runs():
    X, y = _windows()
    m = _forecaster(stochastic_z=True).fit(X, y)
    assert len(m.history_.val_loss) >= 1 and m.vae_.parameters() == []


def test_vae_stage_reconstruction_drops_below_noise():
    rng = np.random.default_rng(0)
    L = 8
    clean = np.sin(np.linspace(0, 2 * np.pi, L))[None, :] * rng.uniform(0.2, 0.8, size=(1000, 1))
    X = clean + rng.normal(scale=0.1, size=clean.shape)
    vae = VaeStage(L, latent_dim=L, hidden=32, rng=RngState(0))
    hist = fit(vae, (X, None), TrainConfig(epochs=60, patience=10, batch_size=50, lr=0.01), RngState(0),
               kl_weight=1e-3)
    assert hist.best_val_loss < hist.val_loss[0]
    assert math.sqrt(np.mean((vae.reconstruct(X) - clean) ** 2)) < 0.1


def test_history_csv_round_trip(tmp_path):
    h = TrainHistory([1.0, 0.5], [0.9, 0.7], [0.1, 0.2], 2, 2)
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,seconds"
    back = TrainHistory.from_csv(tmp_path / "h.csv")
    assert back.losses() == h.losses()


def _toy_factory(cfg):
    class Est:
        def fit(self, X, y, rng=None):
            self.m = LinearToy()
            self.history_ = fit(self.m, (X, y), cfg, rng)
            return self

        def count_params(self):
            return (2, 2)

    return Est()


def test_grid_search_single_point_and_table_size():
    X = np.random.default_rng(0).uniform(-1, 1, size=(200, 1))
    data = (X, 2 * X[:, 0])
    base = TrainConfig(epochs=3, patience=3, batch_size=20)
    one = grid_search({"lr": [0.05]}, data, base, _toy_factory)
    assert one.best_config.lr == 0.05 and len(one.table) == 1
    many = grid_search({"lr": [0.01, 0.05], "batch_size": [20, 40, 50]}, data, base, _toy_factory)
    assert len(many.table) == 6


def test_grid_search_divergent_candidate_ranked_last():
    X = np.random.default_rng(0).uniform(-1, 1, size=(200, 1))
    base = TrainConfig(epochs=5, patience=5, batch_size=20, clip_norm=0.0)

    def factory(cfg):
        est = _toy_factory(cfg)
        if cfg.lr == 10.0:
            orig = est.fit

            def boom(X, y, rng=None):
                est.m = LinearToy()
                est.m.d.W.data[:] = 1e200  # squared loss overflows to inf
                est.history_ = fit(est.m, (X, y), cfg, rng)
                return est

            est.fit = boom
        return est

    res = grid_search({"lr": [10.0, 0.05]}, (X, 2 * X[:, 0]), base, factory)
    assert res.best_config.lr == 0.05
    assert math.isnan(res.table[-1]["score"]) and res.table[-1]["lr"] == 10.0


def test_grid_search_ties_prefer_fewer_params_then_lower_lr():
    class Stub:
        def __init__(self, cfg):
            self.cfg = cfg

        def fit(self, X, y, rng=None):
            self.history_ = TrainHistory([0.0], [0.5], [0.0], 1, 1)
            return self

        def count_params(self):
            return (self.cfg.neurons, self.cfg.neurons)

    X = np.zeros((50, 1))
    res = grid_search({"lr": [0.01, 0.001], "neurons": [8, 4]}, (X, X[:, 0]), TrainConfig(), Stub)
    order = [(r["neurons"], r["lr"]) for r in res.table]
    assert order == [(4, 0.001), (4, 0.01), (8, 0.001), (8, 0.01)]
    assert (res.best_config.neurons, res.best_config.lr) == (4, 0.001)
    with pytest.raises(ContractError):
        grid_search({}, (X, X[:, 0]), TrainConfig(), Stub)
