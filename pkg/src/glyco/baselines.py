"""Heuristic forecasters: copy-last and ordinary-least-squares line extrapolation.

Both produce forecasts whose second-order differences vanish identically, so
their curvature-energy ratio against any reference is 0 (or undefined).
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .errors import DataError


@runtime_checkable
class Forecaster(Protocol):
    """Contract shared by every model: a name and a horizon-length forecast."""

    name: str
    horizon: int

    def forecast(self, values: np.ndarray) -> np.ndarray: ...


def copy_last(values: np.ndarray | list[float], horizon: int = 12) -> np.ndarray:
    """Repeat the final observed value across the whole horizon."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DataError("copy_last needs a non-empty input")
    return np.full(horizon, values[-1])


def linreg_forecast(
    values: np.ndarray | list[float], horizon: int = 12, fit_window: int | None = None
) -> np.ndarray:
    """OLS line over the last fit_window (index, value) points, extrapolated.

    fit_window defaults to the full input. Closed-form slope/intercept; for
    an exactly linear input the extrapolation continues the line exactly.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if fit_window is None:
        fit_window = n
    if fit_window < 2 or fit_window > n:
        raise DataError(f"fit_window must be in [2, {n}], got {fit_window}")
    y = values[n - fit_window :]
    t = np.arange(n - fit_window, n, dtype=float)
    t_mean = t.mean()
    y_mean = y.mean()
    denom = np.sum((t - t_mean) ** 2)
    if denom == 0.0:  # unreachable with >= 2 distinct indices, guarded anyway
        raise DataError("degenerate regression: no index spread")
    slope = np.sum((t - t_mean) * (y - y_mean)) / denom
    intercept = y_mean - slope * t_mean
    future = np.arange(n, n + horizon, dtype=float)
    return intercept + slope * future


class CopyLastForecaster:
    name = "copy_last"

    def __init__(self, horizon: int = 12):
        self.horizon = horizon

    def forecast(self, values: np.ndarray) -> np.ndarray:
        return copy_last(values, self.horizon)


class LinearRegressionForecaster:
    name = "linreg"

    def __init__(self, horizon: int = 12, fit_window: int | None = None):
        self.horizon = horizon
        self.fit_window = fit_window

    def forecast(self, values: np.ndarray) -> np.ndarray:
        return linreg_forecast(values, self.horizon, self.fit_window)
