"""
Per-channel z-score standardization fitted on observed entries only.

Besides the mean and standard deviation used for the z-scores, the fit keeps a
robust centre (median) and spread (interquartile range / 1.349) per channel.
``screen`` uses them to treat extreme readings as unobserved.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-6
IQR_TO_STD = 1.349


def _robust_stats(values: np.ndarray, scale: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    center = np.nanmedian(values, axis=0)
    q1, q3 = np.nanpercentile(values, [25, 75], axis=0)
    spread = (q3 - q1) / IQR_TO_STD
    # Channels with tied quartiles fall back to the standard deviation.
    spread = np.where(spread > 0, spread, scale)
    return center, np.maximum(spread, SCALE_FLOOR)


@dataclass
class Standardizer:
    """
    Channel means and scales of a training split.

    ``apply`` maps raw readings to ``(x - mean) / scale`` and zero-fills missing
    entries; the returned mask marks which entries were observed.
    """

    mean: np.ndarray
    scale: np.ndarray
    center: Optional[np.ndarray] = None
    spread: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.center = self.mean.copy() if self.center is None else np.asarray(self.center, dtype=np.float64)
        self.spread = self.scale.copy() if self.spread is None else np.asarray(self.spread, dtype=np.float64)

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def fit(cls, values) -> 'Standardizer':
        """
        Fit on a ``(T, d)`` matrix where NaN marks missing readings.

        Raises:
            DataError: If any channel has fewer than two observed values.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"Expected a (T, d) matrix, got shape {values.shape}")
        observed = ~np.isnan(values)
        counts = observed.sum(axis=0)
        too_sparse = np.flatnonzero(counts < 2)
        if too_sparse.size:
            raise DataError(
                "Cannot standardize channels with fewer than 2 observed values",
                {"channels": too_sparse.tolist(), "counts": counts[too_sparse].tolist()},
            )
        mean = np.nanmean(values, axis=0)
        scale = np.maximum(np.nanstd(values, axis=0), SCALE_FLOOR)
        center, spread = _robust_stats(values, scale)
        logger.debug(f"Fitted standardizer on {values.shape[0]} rows x {values.shape[1]} channels")
        return cls(mean, scale, center, spread)

    def _check(self, values: np.ndarray):
        if values.shape[-1] != self.n_channels:
            raise DimensionError("standardizer channels", self.n_channels, values.shape[-1])

    def screen(self, values, bound: Optional[float]) -> np.ndarray:
        """
        Replace readings more than ``bound`` robust spreads from the channel centre with NaN.

        ``bound=None`` disables screening.
        """
        values = np.asarray(values, dtype=np.float64)
        self._check(values)
        if bound is None:
            return values.copy()
        if not bound > 0:
            raise ConfigError("outlier_bound", f"must be > 0, got {bound}")
        extreme = np.abs(values - self.center) > bound * self.spread
        if extreme.any():
            logger.debug(f"Screened {int(extreme.sum())} readings beyond {bound} robust spreads")
        return np.where(extreme, np.nan, values)

    def apply(self, values) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(standardized zero-filled values, observation mask)``."""
        values = np.asarray(values, dtype=np.float64)
        self._check(values)
        mask = (~np.isnan(values)).astype(np.float64)
        x = np.where(mask > 0, (np.nan_to_num(values) - self.mean) / self.scale, 0.0)
        return x, mask

    def destandardize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return x * self.scale + self.mean

    def destandardize_std(self, std) -> np.ndarray:
        std = np.asarray(std, dtype=np.float64)
        self._check(std)
        return std * self.scale

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "center": [float(v) for v in self.center],
            "spread": [float(v) for v in self.spread],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Standardizer':
        return cls(np.asarray(data["mean"]), np.asarray(data["scale"]),
                   data.get("center"), data.get("spread"))


def standardize_fit(values) -> Standardizer:
    return Standardizer.fit(values)


def standardize_apply(standardizer: Standardizer, values,
                      outlier_bound: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Screen extreme readings, then standardize; screened entries come back unobserved."""
    return standardizer.apply(standardizer.screen(values, outlier_bound))


def destandardize(standardizer: Standardizer, x) -> np.ndarray:
    return standardizer.destandardize(x)
