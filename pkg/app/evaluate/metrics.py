"""
Accuracy and temporal-structure metrics against a reference series.

All metrics pair predictions and references hour by hour and only use hours
where both are observed.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.exceptions import DataError

logger = logging.getLogger(__name__)

DEFAULT_EPS_GRID = np.round(np.arange(0.0, 25.0 + 1e-9, 0.25), 2)
DEFAULT_MAX_LAG = 48


def _co_observed(pred, ref) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise DataError(f"Prediction and reference lengths differ: {pred.size} vs {ref.size}")
    both = ~np.isnan(pred) & ~np.isnan(ref)
    if not both.any():
        raise DataError("No hour where prediction and reference are both observed")
    return pred[both], ref[both]


def mae(pred, ref) -> float:
    """Mean absolute error over co-observed hours."""
    p, r = _co_observed(pred, ref)
    return float(np.mean(np.abs(p - r)))


def hit_rate_curve(pred, ref, eps_grid: Sequence[float] = DEFAULT_EPS_GRID) -> List[Tuple[float, float]]:
    """
    Fraction of co-observed hours with ``|pred - ref| <= eps`` for every ``eps``.

    Returns:
        list: ``(eps, fraction)`` pairs in grid order.
    """
    p, r = _co_observed(pred, ref)
    errors = np.sort(np.abs(p - r))
    eps = np.asarray(eps_grid, dtype=np.float64)
    counts = np.searchsorted(errors, eps, side='right')
    return [(float(e), float(c) / errors.size) for e, c in zip(eps, counts)]


def autocorrelation(series, max_lag: int = DEFAULT_MAX_LAG) -> np.ndarray:
    """
    Pearson autocorrelation at lags ``1..max_lag``.

    Each lag correlates ``x_t`` with ``x_{t+lag}`` over the hours where both are
    observed. A lag with too few or degenerate pairs is NaN.

    Raises:
        DataError: If the observed values have zero variance.
    """
    values = pd.Series(np.asarray(series, dtype=np.float64).ravel())
    observed = values.dropna()
    if observed.size < 2 or observed.max() == observed.min():
        raise DataError("Cannot compute the autocorrelation of a constant series")
    profile = np.array([values.autocorr(lag) for lag in range(1, max_lag + 1)], dtype=np.float64)
    return np.clip(profile, -1.0, 1.0)


def seed_statistics(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation; the spread of a single run is 0."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DataError("No runs to summarise")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), std


def histogram_counts(values, bins='fd') -> pd.DataFrame:
    """
    Binned counts for external density plots; Freedman-Diaconis widths by default.

    Returns:
        pd.DataFrame: ``bin_left``, ``bin_right``, ``count`` and ``density`` columns.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        raise DataError("No finite values to bin")
    edges = np.histogram_bin_edges(arr, bins=bins)
    counts, _ = np.histogram(arr, bins=edges)
    widths = np.diff(edges)
    density = np.where(widths > 0, counts / (arr.size * np.where(widths > 0, widths, 1.0)), 0.0)
    return pd.DataFrame({
        'bin_left': edges[:-1],
        'bin_right': edges[1:],
        'count': counts.astype(np.int64),
        'density': density,
    })


def twelve_hour_average(series: pd.Series) -> pd.Series:
    """Mean over 12-hour windows, for smoothed time-series exports."""
    return series.resample("12h").mean()
