"""Point and probabilistic forecast scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

DECILES = np.round(np.arange(1, 10) / 10.0, 1)


def _pair(y_hat, y) -> tuple[np.ndarray, np.ndarray]:
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_hat.shape != y.shape:
        raise ContractError(f"length mismatch: {y_hat.size} forecasts vs {y.size} observations")
    if y.size == 0:
        raise ContractError("need at least one observation")
    return y_hat, y


def rmse(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def mae(y_hat, y) -> float:
    y_hat, y = _pair(y_hat, y)
    return float(np.mean(np.abs(y_hat - y)))


def r_score(y_hat, y) -> float:
    """Coefficient of determination ``1 - SSE / SST``."""
    y_hat, y = _pair(y_hat, y)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ContractError("R is undefined for a constant target")
    return 1.0 - float(np.sum((y_hat - y) ** 2)) / sst


def brier(f, y) -> float:
    """Mean squared difference between forecasts and observations."""
    f, y = _pair(f, y)
    return float(np.mean((f - y) ** 2))


def pinball(y, y_hat_q, q) -> np.ndarray:
    """Elementwise pinball loss of quantile forecasts at level(s) ``q``."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0) or np.any(q >= 1):
        raise ContractError(f"quantile level must lie in (0, 1), got {q}")
    r = np.asarray(y, dtype=np.float64) - np.asarray(y_hat_q, dtype=np.float64)
    return np.where(r >= 0, q * r, (q - 1.0) * r)


@dataclass
class QuantileForecast:
    """Per-step forecasts at sorted levels; rows are sorted so quantiles never cross."""

    levels: np.ndarray
    values: np.ndarray  # (n_steps, n_levels)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64).reshape(-1)
        vals = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if levels.size == 0:
            raise ContractError("at least one quantile level is required")
        if np.any(levels <= 0) or np.any(levels >= 1):
            raise ContractError("quantile levels must lie in (0, 1)")
        if vals.shape[1] != levels.size:
            raise ContractError(f"{vals.shape[1]} value columns for {levels.size} levels")
        order = np.argsort(levels)
        self.levels = levels[order]
        self.values = np.sort(vals[:, order], axis=1)

    def at(self, level: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.levels, level))
        if idx.size == 0:
            raise ContractError(f"level {level} not available")
        return self.values[:, idx[0]]


def pinball_avg(qf: QuantileForecast, y) -> float:
    """Mean pinball loss over every step and level."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != qf.values.shape[0]:
        raise ContractError(f"{qf.values.shape[0]} forecast steps vs {y.size} observations")
    return float(np.mean(pinball(y[:, None], qf.values, qf.levels[None, :])))


@dataclass
class IntervalForecast:
    """Bounds of a central prediction interval with miscoverage ``gamma``."""

    lb: np.ndarray
    ub: np.ndarray
    gamma: float

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=np.float64).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=np.float64).reshape(-1)
        if self.lb.shape != self.ub.shape:
            raise ContractError("lower and upper bounds differ in length")
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(self.lb > self.ub):
            raise ContractError("lower bound exceeds upper bound")

    @property
    def width(self) -> np.ndarray:
        return self.ub - self.lb

    def coverage(self, y) -> float:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        return float(np.mean((y >= self.lb) & (y <= self.ub)))


def winkler(intv: IntervalForecast, y) -> float:
    """Interval width plus ``2/gamma`` times the distance by which ``y`` escapes it."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != intv.lb.shape:
        raise ContractError(f"{intv.lb.size} intervals vs {y.size} observations")
    score = intv.width.copy()
    below = y < intv.lb
    above = y > intv.ub
    score[below] += 2.0 * (intv.lb[below] - y[below]) / intv.gamma
    score[above] += 2.0 * (y[above] - intv.ub[above]) / intv.gamma
    return float(score.mean())


def reconstruction_error(x, x_hat) -> float:
    """Mean squared error over every entry of the windows."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))
