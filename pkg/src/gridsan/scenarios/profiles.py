"""Synthetic daily per-unit profiles, piecewise constant on 10-minute steps.

These curves are invented test data: a photovoltaic bell around midday, a
wind random walk, a two-peak residential load and a daytime industrial load.
"""

from __future__ import annotations

import numpy as np

STEP_MIN = 10
STEPS_PER_DAY = 24 * 60 // STEP_MIN


def hours(n_steps: int = STEPS_PER_DAY) -> np.ndarray:
    """Midpoint hour of each step."""
    return (np.arange(n_steps) + 0.5) * STEP_MIN / 60.0


def photovoltaic(peak_hour: float = 12.5, width_h: float = 2.6) -> np.ndarray:
    h = hours()
    p = np.exp(-0.5 * ((h - peak_hour) / width_h) ** 2)
    p[p < 0.02] = 0.0
    return p


def wind(seed: int, mean: np.ndarray | None = None, sigma: float = 0.06, reversion: float = 0.15) -> np.ndarray:
    """Mean-reverting random walk around ``mean``, clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    mean = np.full(STEPS_PER_DAY, 0.5) if mean is None else np.asarray(mean, dtype=float)
    x = np.empty(STEPS_PER_DAY)
    level = mean[0]
    for k in range(STEPS_PER_DAY):
        level += reversion * (mean[k] - level) + sigma * rng.standard_normal()
        level = min(1.0, max(0.0, level))
        x[k] = level
    return x


def residential(base: float = 0.35) -> np.ndarray:
    h = hours()
    morning = 0.35 * np.exp(-0.5 * ((h - 8.0) / 1.2) ** 2)
    evening = 0.65 * np.exp(-0.5 * ((h - 19.5) / 1.6) ** 2)
    return np.clip(base + morning + evening, 0.0, 1.0)


def industrial(day_level: float = 0.9, night_level: float = 0.35) -> np.ndarray:
    h = hours()
    ramp = 1.0 / (1.0 + np.exp(-(h - 7.0) * 3.0)) - 1.0 / (1.0 + np.exp(-(h - 18.0) * 3.0))
    return night_level + (day_level - night_level) * ramp
