"""Half-hourly generation series: loading, Ausgrid conversion, (-1, 1)
scaling, lag windows and chronological train/test splits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ContractError, DataError, NotFoundError

logger = logging.getLogger(__name__)

STEP = timedelta(minutes=30)
STEPS_PER_DAY = 48
DAYTIME = (time(6, 0), time(20, 0))
INTRADAY = (time(7, 30), time(16, 30))


@dataclass(frozen=True)
class SeriesRecord:
    timestamp: datetime
    kwh: float


def values(records) -> np.ndarray:
    return np.array([r.kwh for r in records], dtype=np.float64)


# ---------------------------------------------------------------------------
# long CSV


def load_long_csv(path) -> list[SeriesRecord]:
    """Read a ``timestamp,kwh`` file (ISO-8601 timestamps) in ascending order."""
    path = Path(path)
    records: list[SeriesRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["timestamp", "kwh"]:
            raise DataError(f"{path}: expected header 'timestamp,kwh', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
                kwh = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse {row!r} ({exc})") from exc
            if not np.isfinite(kwh) or kwh < 0:
                raise DataError(f"{path}:{lineno}: kwh must be a non-negative number, got {kwh}")
            if records:
                prev = records[-1].timestamp
                if ts == prev:
                    raise DataError(f"{path}:{lineno}: duplicate timestamp {ts.isoformat()}")
                if ts < prev:
                    raise DataError(f"{path}:{lineno}: timestamp {ts.isoformat()} goes back in time")
            records.append(SeriesRecord(ts, kwh))
    return records


def write_long_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "kwh"])
        for r in records:
            writer.writerow([r.timestamp.isoformat(), f"{r.kwh:.6f}"])


# ---------------------------------------------------------------------------
# Ausgrid wide layout

_DATE_FORMATS = ("%d/%m/%Y", "%d-%b-%y", "%d-%b-%Y", "%Y-%m-%d", "%d/%m/%y")


def _parse_date(text: str) -> datetime:
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognised date {text!r}")


def _fill_day(day: datetime, cells: list[str]) -> list[float] | None:
    """Numeric values for one day, or ``None`` if a daytime gap is too long to repair."""
    vals: list[float | None] = []
    for cell in cells:
        cell = cell.strip()
        vals.append(float(cell) if cell else None)
    for k, v in enumerate(vals):
        if v is not None:
            continue
        t = (day + k * STEP).time()
        if not DAYTIME[0] <= t < DAYTIME[1]:
            vals[k] = 0.0
    for k, v in enumerate(vals):
        if v is not None:
            continue
        left = vals[k - 1] if k > 0 else None
        right = vals[k + 1] if k + 1 < len(vals) else None
        if left is None or right is None:
            return None
        vals[k] = 0.5 * (left + right)
    return vals  # type: ignore[return-value]


def ausgrid_wide_to_long(path, customer_id, channel: str = "GG") -> list[SeriesRecord]:
    """Convert the Ausgrid customer-day layout (48 half-hour columns) to records.

    Rows are filtered by ``Customer`` and ``Consumption Category`` (``GG`` is
    gross generation). Interval ``k`` of a day is stamped at its start,
    ``date + 30 min * k``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    start = next((i for i, r in enumerate(rows) if r and r[0].strip().lower() == "customer"), None)
    if start is None:
        raise DataError(f"{path}: no header row starting with 'Customer'")
    header = [h.strip() for h in rows[start]]
    lower = [h.lower() for h in header]
    try:
        i_cust, i_cat, i_date = lower.index("customer"), lower.index("consumption category"), lower.index("date")
    except ValueError as exc:
        raise DataError(f"{path}: missing column ({exc})") from exc
    i_end = lower.index("row quality") if "row quality" in lower else len(header)
    interval_cols = list(range(i_date + 1, i_end))
    if len(interval_cols) != STEPS_PER_DAY:
        raise DataError(f"{path}: expected 48 half-hour columns, found {len(interval_cols)}")

    wanted = str(customer_id).strip()
    days: dict[datetime, list[float]] = {}
    matched = 0
    for lineno, row in enumerate(rows[start + 1:], start=start + 2):
        if not row or row[i_cust].strip() != wanted or row[i_cat].strip().upper() != channel.upper():
            continue
        matched += 1
        if len(row) < i_end or len(row) - (i_date + 1) < STEPS_PER_DAY:
            raise DataError(f"{path}:{lineno}: day has {max(0, len(row) - i_date - 1)} intervals, expected 48")
        try:
            day = _parse_date(row[i_date])
            filled = _fill_day(day, [row[i] for i in interval_cols])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if day in days:
            raise DataError(f"{path}:{lineno}: duplicate day {day.date().isoformat()}")
        if filled is None:
            logger.warning("dropping %s: daytime gap longer than one interval", day.date())
            continue
        if any(v < 0 for v in filled):
            raise DataError(f"{path}:{lineno}: negative generation value")
        days[day] = filled
    if matched == 0:
        raise NotFoundError(f"no rows for customer {wanted} and channel {channel} in {path}")
    records = []
    for day in sorted(days):
        records.extend(SeriesRecord(day + k * STEP, v) for k, v in enumerate(days[day]))
    return records


# ---------------------------------------------------------------------------
# subsets


def select_subset(records, subset: str = "full", intraday=INTRADAY) -> list[SeriesRecord]:
    """``full``, ``six-months`` (first six calendar months) or ``intraday``
    (the daily ``intraday`` window, 07:30-16:30 by default)."""
    records = list(records)
    if subset == "full":
        return records
    if not records:
        return records
    if subset == "six-months":
        first = records[0].timestamp
        month = first.month - 1 + 6
        end = first.replace(year=first.year + month // 12, month=month % 12 + 1, day=1,
                            hour=0, minute=0, second=0, microsecond=0)
        return [r for r in records if r.timestamp < end]
    if subset == "intraday":
        lo, hi = intraday
        return [r for r in records if lo <= r.timestamp.time() < hi]
    raise ContractError(f"unknown subset {subset!r}")


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ContractError(f"scaler needs max > min (got min={self.min}, max={self.max})")

    def apply(self, x):
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.min) / (self.max - self.min) - 1.0

    def invert(self, x):
        return (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * (self.max - self.min) + self.min

    @property
    def half_range(self) -> float:
        return 0.5 * (self.max - self.min)


def fit_apply_scaler(train) -> tuple[ScalerParams, np.ndarray]:
    """Fit a min-max map onto (-1, 1) and apply it to ``train``."""
    x = np.asarray(train, dtype=np.float64)
    if x.size == 0 or np.ptp(x) == 0:
        raise ContractError("cannot scale a constant or empty series")
    params = ScalerParams(float(x.min()), float(x.max()))
    return params, params.apply(x)


class SymmetricMinMaxScaler(TransformerMixin, BaseEstimator):
    """Min-max scaling onto [-1, 1] using one global min/max over all entries.

    Values beyond the fitted range map outside [-1, 1] without error.
    """

    def fit(self, X, y=None):
        self.params_, _ = fit_apply_scaler(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return self.params_.apply(X)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return self.params_.invert(X)


# ---------------------------------------------------------------------------
# windows and splits


@dataclass
class WindowedDataset:
    """Lag matrix ``X`` (n x L) and next-step targets ``y``."""

    X: np.ndarray
    y: np.ndarray
    scaler: ScalerParams | None = None
    timestamps: list | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def lags(self) -> int:
        return self.X.shape[1]


def make_windows(series, L: int = 96, timestamps=None) -> WindowedDataset:
    """Row ``i`` holds ``series[i:i+L]`` and the target is ``series[i+L]``."""
    x = np.asarray(series, dtype=np.float64)
    if L < 1:
        raise ContractError("window length must be positive")
    if x.ndim != 1 or len(x) <= L:
        raise ContractError(f"series of length {len(x)} is too short for {L} lags")
    X = np.lib.stride_tricks.sliding_window_view(x, L)[:-1].copy()
    ts = list(timestamps[L:]) if timestamps is not None else None
    return WindowedDataset(X, x[L:].copy(), timestamps=ts)


def split(ds: WindowedDataset, train_ratio: float) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological split: the first ``floor(ratio * n)`` rows train."""
    if not 0.0 < train_ratio < 1.0:
        raise ContractError(f"train ratio must lie in (0, 1), got {train_ratio}")
    n_train = int(np.floor(train_ratio * len(ds)))
    ts = ds.timestamps

    def part(sl):
        return WindowedDataset(ds.X[sl], ds.y[sl], ds.scaler, None if ts is None else ts[sl])

    return part(slice(0, n_train)), part(slice(n_train, None))


def prepare_datasets(series, lags: int = 96, train_ratio: float = 0.8, timestamps=None):
    """Window, split and scale a raw series.

    The scaler is fitted only on values visible to the training windows
    (their lags and targets); the test portion may leave (-1, 1).
    Returns ``(train, test, scaler)`` with both datasets scaled.
    """
    raw = np.asarray(series, dtype=np.float64)
    train, test = split(make_windows(raw, lags, timestamps), train_ratio)
    if len(train) == 0 or len(test) == 0:
        raise ContractError("train/test split leaves an empty portion")
    scaler, _ = fit_apply_scaler(raw[: len(train) + lags])

    def scaled(ds):
        return WindowedDataset(scaler.apply(ds.X), scaler.apply(ds.y), scaler, ds.timestamps)

    return scaled(train), scaled(test), scaler
