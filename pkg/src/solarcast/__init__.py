"""Probabilistic solar-generation forecasting with Bayesian recurrent
networks, an optional VAE front end, and an evaluation harness."""

from .data import (
    ScalerParams,
    SeriesRecord,
    SymmetricMinMaxScaler,
    WindowedDataset,
    ausgrid_wide_to_long,
    fit_apply_scaler,
    load_long_csv,
    make_windows,
    prepare_datasets,
    select_subset,
    split,
    write_long_csv,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    NotFoundError,
    ShapeError,
    SolarcastError,
    TrainingDivergence,
)
from .metrics import IntervalForecast, QuantileForecast, brier, mae, pinball_avg, r_score, rmse, winkler
from .models import (
    MODEL_ZOO,
    ModelConfig,
    ProbabilisticForecaster,
    QuantileRegressionForecaster,
    VaeCompressor,
    build_model,
    count_params,
)
from .pipeline import ComparisonReport, ForecastResult, emit_plot_data, forecast_with_pis, persistence_baseline, run_comparison
from .serialize import load_model, save_model
from .tensor import RngState, Tensor
from .training import TrainConfig, TrainHistory, grid_search

__version__ = "0.1.0"
