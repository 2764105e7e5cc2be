"""Synthetic series with known structure for tests and demos."""

from __future__ import annotations

from datetime import datetime

import numpy as np

from .data import STEP, SeriesRecord


def sinusoid(n: int, period: float = 48.0, amplitude: float = 1.0, noise: float = 0.0,
             seed: int = 0, phase: float = 0.0) -> np.ndarray:
    t = np.arange(n)
    y = amplitude * np.sin(2 * np.pi * t / period + phase)
    if noise:
        y = y + noise * np.random.default_rng(seed).standard_normal(n)
    return y


def heteroscedastic(n: int, period: float = 48.0, base: float = 0.05, extra: float = 0.25,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``sin(2 pi t / period) + sigma(t) eps`` where the noise scale follows the
    same cycle; returns ``(y, sigma)``."""
    t = np.arange(n)
    phase = 2 * np.pi * t / period
    sigma = base + extra * 0.5 * (1 + np.sin(phase))
    y = np.sin(phase) + sigma * np.random.default_rng(seed).standard_normal(n)
    return y, sigma


def random_walk(n: int, step_std: float = 1.0, seed: int = 0) -> np.ndarray:
    return np.cumsum(step_std * np.random.default_rng(seed).standard_normal(n))


def solar_records(days: int, peak_kwh: float = 1.4, cloud: float = 0.15, seed: int = 0,
                  start: datetime = datetime(2011, 7, 1)) -> list[SeriesRecord]:
    """Half-hourly generation shaped like a clear-sky bell between 06:00 and
    18:00, scaled by a random daily cloud factor and multiplicative noise."""
    rng = np.random.default_rng(seed)
    k = np.arange(48)
    hours = k / 2.0
    bell = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    out = []
    for d in range(days):
        day_factor = 1.0 - cloud * rng.random()
        noise = 1.0 + cloud * 0.3 * rng.standard_normal(48)
        kwh = np.clip(peak_kwh * day_factor * bell * noise, 0.0, None)
        base = start + d * 48 * STEP
        out.extend(SeriesRecord(base + i * STEP, float(round(v, 4))) for i, v in zip(k, kwh))
    return out
