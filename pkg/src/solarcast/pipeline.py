"""Monte-Carlo forecasting with prediction intervals, plot data, and the
model comparison harness (metric table per model and dataset)."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import ScalerParams, SeriesRecord, prepare_datasets, select_subset, values
from .errors import ContractError, SolarcastError
from .metrics import (
    DECILES,
    IntervalForecast,
    QuantileForecast,
    brier,
    mae,
    pinball_avg,
    r_score,
    rmse,
    winkler,
)
from .models import MODEL_ZOO, ModelConfig, QuantileRegressionForecaster, build_model
from .tensor import RngState
from .training import TrainConfig

logger = logging.getLogger(__name__)

PI_LEVELS = (0.5, 0.9)
METRIC_COLUMNS = ("rmse", "mae", "r", "pinball_avg", "winkler", "brier", "weight_count")
PLOT_COLUMNS = ("t", "y_true", "mean", "lb50", "ub50", "lb90", "ub90")


@dataclass
class ForecastResult:
    """Predictive mean/std per step, central intervals keyed by coverage, and
    decile forecasts for pinball scoring."""

    mean: np.ndarray
    std: np.ndarray
    intervals: dict[float, IntervalForecast]
    mc_samples: int
    quantiles: QuantileForecast | None = None

    def __len__(self) -> int:
        return len(self.mean)


def _nest(mean, bounds: dict[float, tuple[np.ndarray, np.ndarray]]):
    """Force ``lb <= mean <= ub`` and make wider coverage contain narrower."""
    out = {}
    lb_prev = ub_prev = mean
    for c in sorted(bounds):
        lb, ub = bounds[c]
        lb = np.minimum(lb, lb_prev)
        ub = np.maximum(ub, ub_prev)
        out[c] = (lb, ub)
        lb_prev, ub_prev = lb, ub
    return out


def _check_levels(levels) -> list[float]:
    levels = sorted(float(c) for c in levels)
    if not levels or levels[0] <= 0 or levels[-1] >= 1:
        raise ContractError(f"coverage levels must lie in (0, 1), got {levels}")
    return levels


def forecast_with_pis(model, X, mc_samples: int = 100, rng: RngState | None = None,
                      levels=PI_LEVELS, scaler: ScalerParams | None = None) -> ForecastResult:
    """Predictive mean, std and central PIs for each window.

    Bayesian models: each of ``mc_samples`` weight draws gives ``(mu_s, sigma_s)``
    and one value ``y_s ~ N(mu_s, sigma_s)``; intervals are empirical quantiles
    of the ``y_s`` at ``(1 -/+ c) / 2``. The quantile-regression baseline reads
    its fitted levels directly. With ``scaler`` everything is mapped back to kWh.
    """
    levels = _check_levels(levels)
    X = np.asarray(X, dtype=np.float64)
    if isinstance(model, QuantileRegressionForecaster):
        q = model.predict_quantiles(X)
        lv = model.levels_

        def col(level):
            idx = np.flatnonzero(np.isclose(lv, level))
            if idx.size == 0:
                raise ContractError(f"quantile model lacks level {level}")
            return q[:, idx[0]]

        mean = col(0.5)
        bounds = {c: (col((1 - c) / 2), col((1 + c) / 2)) for c in levels}
        # spread implied by the widest interval under a normal shape
        c_max = levels[-1]
        std = (bounds[c_max][1] - bounds[c_max][0]) / (2 * norm.ppf((1 + c_max) / 2))
        keep = [k for k, v in enumerate(lv) if np.any(np.isclose(DECILES, v))]
        dec_levels, dec_values = lv[keep], q[:, keep]
        n_samples = 0
    else:
        if mc_samples < 2:
            raise ContractError(f"need at least 2 Monte-Carlo samples, got {mc_samples}")
        rng = rng or RngState(0)
        mus, sigmas = model.sample_predictive(X, mc_samples, rng)
        draws = mus + sigmas * rng.normal(mus.shape)
        mean = mus.mean(axis=0)
        # mixture variance: spread of the means plus average aleatoric variance
        std = np.sqrt(mus.var(axis=0) + np.mean(sigmas ** 2, axis=0))
        qs = {c: np.quantile(draws, [(1 - c) / 2, (1 + c) / 2], axis=0) for c in levels}
        bounds = {c: (v[0], v[1]) for c, v in qs.items()}
        dec_levels = DECILES
        dec_values = np.quantile(draws, DECILES, axis=0).T
        n_samples = mc_samples

    bounds = _nest(mean, bounds)
    if scaler is not None:
        mean = scaler.invert(mean)
        std = std * scaler.half_range
        bounds = {c: (scaler.invert(lb), scaler.invert(ub)) for c, (lb, ub) in bounds.items()}
        dec_values = scaler.invert(dec_values)
    intervals = {c: IntervalForecast(lb, ub, gamma=round(1.0 - c, 12)) for c, (lb, ub) in bounds.items()}
    return ForecastResult(np.asarray(mean), np.asarray(std), intervals, n_samples,
                          QuantileForecast(dec_levels, dec_values))


def persistence_baseline(X) -> np.ndarray:
    """Last observed lag of each window."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] < 1:
        raise ContractError("windows need at least one lag")
    return X[:, -1].copy()


def emit_plot_data(result: ForecastResult, y_true, path, t=None) -> None:
    """Write ``t,y_true,mean,lb50,ub50,lb90,ub90`` rows, one per step."""
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    n = len(result.mean)
    if y_true.size != n:
        raise ContractError(f"{y_true.size} observations for {n} forecast steps")
    missing = [c for c in PI_LEVELS if c not in result.intervals]
    if missing:
        raise ContractError(f"result lacks intervals at {missing}")
    t = list(range(n)) if t is None else list(t)
    if len(t) != n:
        raise ContractError("time axis length differs from forecast length")
    cols = [y_true, result.mean,
            result.intervals[0.5].lb, result.intervals[0.5].ub,
            result.intervals[0.9].lb, result.intervals[0.9].ub]
    if not all(np.all(np.isfinite(c)) for c in cols):
        raise ContractError("plot data contains non-finite values")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_COLUMNS)
        for i in range(n):
            stamp = t[i].isoformat() if hasattr(t[i], "isoformat") else t[i]
            writer.writerow([stamp, *(f"{c[i]:.6f}" for c in cols)])


def score_forecast(result: ForecastResult, y_true) -> dict[str, float]:
    y_true = np.asarray(y_true, dtype=np.float64)
    return {
        "rmse": rmse(result.mean, y_true),
        "mae": mae(result.mean, y_true),
        "r": r_score(result.mean, y_true),
        "pinball_avg": pinball_avg(result.quantiles, y_true),
        "winkler": winkler(result.intervals[0.9], y_true),
        "brier": brier(result.mean, y_true),
    }


# ---------------------------------------------------------------------------
# comparison report


@dataclass
class ComparisonRow:
    model: str
    dataset: str
    metrics: dict[str, float]
    train_seconds: float = math.nan
    status: str = "ok"


@dataclass
class ComparisonReport:
    """One row per model. The metrics CSV is long format and timing-free so
    identical seeds give identical files; wall-clock goes to a separate CSV."""

    dataset: str
    rows: list[ComparisonRow] = field(default_factory=list)

    def row(self, model: str) -> ComparisonRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "dataset", "metric", "value", "status"])
            for r in self.rows:
                for m in METRIC_COLUMNS:
                    writer.writerow([r.model, r.dataset, m, f"{r.metrics.get(m, math.nan):.6f}", r.status])

    def timing_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "dataset", "train_seconds"])
            for r in self.rows:
                writer.writerow([r.model, r.dataset, f"{r.train_seconds:.3f}"])

    @classmethod
    def from_csv(cls, path, timing_path=None) -> "ComparisonReport":
        rows: dict[tuple[str, str], ComparisonRow] = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                key = (rec["model"], rec["dataset"])
                row = rows.setdefault(key, ComparisonRow(rec["model"], rec["dataset"], {}, status=rec["status"]))
                row.metrics[rec["metric"]] = float(rec["value"])
        if timing_path is not None:
            with open(timing_path, newline="") as fh:
                for rec in csv.DictReader(fh):
                    rows[(rec["model"], rec["dataset"])].train_seconds = float(rec["train_seconds"])
        datasets = {k[1] for k in rows}
        return cls(datasets.pop() if len(datasets) == 1 else ",".join(sorted(datasets)), list(rows.values()))

    def table(self) -> str:
        """Wide text table, one line per model."""
        head = ["model", *METRIC_COLUMNS, "train_seconds", "status"]
        lines = [" ".join(f"{h:>12}" for h in head)]
        for r in self.rows:
            cells = [r.model, *(f"{r.metrics.get(m, math.nan):.6f}" for m in METRIC_COLUMNS),
                     f"{r.train_seconds:.1f}", r.status]
            lines.append(" ".join(f"{c:>12}" for c in cells))
        return "\n".join(lines)


def model_seed(seed: int, model_id: str) -> int:
    """Seed for one model, independent of which other models are compared."""
    index = sorted(MODEL_ZOO).index(model_id.upper())
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1, dtype=np.uint32)[0])


def _as_series(data, subset: str):
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], SeriesRecord):
        recs = select_subset(data, subset)
        return values(recs), [r.timestamp for r in recs]
    if subset != "full":
        raise ContractError("subsets need timestamped records")
    return np.asarray(data, dtype=np.float64), None


def run_comparison(models, data, cfg: TrainConfig | None = None, subset: str = "full",
                   ratio: float = 0.8, mc_samples: int = 100, seed: int | None = None,
                   dataset_name: str | None = None, keep=None) -> ComparisonReport:
    """Train and score each model on the same chronological split.

    ``models`` holds :class:`ModelConfig` objects or ids such as ``"M1"``;
    ``data`` is a list of :class:`SeriesRecord` or a plain array. Metrics are
    computed in kWh. A model that raises is reported with ``status`` set to
    ``failed: ...`` and the run moves on. If ``keep`` is a dict, fitted models
    and forecasts are stored in it by model id.
    """
    cfg = cfg or TrainConfig()
    seed = cfg.seed if seed is None else seed
    series, stamps = _as_series(data, subset)
    train, test, scaler = prepare_datasets(series, cfg.lags, ratio, stamps)
    y_true = scaler.invert(test.y)
    report = ComparisonReport(dataset_name or subset)
    for entry in models:
        mc = entry if isinstance(entry, ModelConfig) else ModelConfig.from_id(
            entry, neurons=cfg.neurons, lags=cfg.lags, latent=cfg.latent_dims)
        row = ComparisonRow(mc.id, report.dataset, {})
        s = model_seed(seed, mc.id)
        try:
            model = build_model(mc, cfg, seed=s)
            fit_rng, pred_rng = RngState(s).spawn(2)
            start = time.perf_counter()
            model.fit(train.X, train.y, rng=fit_rng)
            row.train_seconds = time.perf_counter() - start
            result = forecast_with_pis(model, test.X, mc_samples, pred_rng, scaler=scaler)
            row.metrics = score_forecast(result, y_true)
            row.metrics["weight_count"] = float(model.count_params()[1])
            if keep is not None:
                keep[mc.id] = (model, result, y_true, test.timestamps)
        except (SolarcastError, ArithmeticError, ValueError) as exc:
            logger.warning("%s failed: %s", mc.id, exc)
            row.status = f"failed: {type(exc).__name__}"
        report.rows.append(row)
    return report


def directional_claims(reports) -> dict[str, bool]:
    """Orderings expected on real data, judged on medians across seeds:
    M1 at or below M2 on RMSE and pinball, and each VAE variant lighter than
    its plain counterpart."""
    reports = list(reports)

    def med(model, metric):
        vals = []
        for rep in reports:
            try:
                vals.append(rep.row(model).metrics[metric])
            except KeyError:
                pass
        return float(np.median(vals)) if vals else math.nan

    claims = {
        "M1<=M2 rmse": med("M1", "rmse") <= med("M2", "rmse"),
        "M1<=M2 pinball_avg": med("M1", "pinball_avg") <= med("M2", "pinball_avg"),
    }
    for vae, plain in (("M1", "M2"), ("M3", "M4"), ("M5", "M6")):
        claims[f"{vae}<{plain} weights"] = med(vae, "weight_count") < med(plain, "weight_count")
    return claims
