"""
Data transformation module for the Veli correction toolkit.

Cleans hourly sensor series and assembles them into a location dataset:
physical-range validation, DBSCAN outlier scrubbing on two-month batches,
alignment, reference averaging, eligibility filtering and chronological
partitioning.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.cluster import DBSCAN

from app.exceptions import ConfigError, DataError
from app.extract.series import HourlySeries, LocationDataset

logger = logging.getLogger(__name__)

# Closed intervals per measurement kind.
MEASUREMENT_BOUNDS: Dict[str, Tuple[float, float]] = {
    'pm25': (0.0, 1000.0),
    'temperature': (-50.0, 70.0),
}

BATCH_HOURS = 1460
DBSCAN_MIN_PTS = 24
MAD_MULTIPLIER = 5.0
EPS_FLOOR = 1e-6


def _resolve_bounds(kind: Optional[str], bounds: Optional[Tuple[float, float]]) -> Tuple[float, float]:
    if bounds is None:
        key = (kind or 'pm25').lower()
        if key not in MEASUREMENT_BOUNDS:
            raise ConfigError("kind", f"unknown measurement kind '{kind}', expected one of {sorted(MEASUREMENT_BOUNDS)}")
        bounds = MEASUREMENT_BOUNDS[key]
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ConfigError("bounds", f"need finite lo < hi, got ({lo}, {hi})")
    return lo, hi


def range_validate(series: HourlySeries, kind: Optional[str] = 'pm25',
                   bounds: Optional[Tuple[float, float]] = None) -> HourlySeries:
    """
    Replace values outside the physical range with NA.

    Args:
        series (HourlySeries): Series to validate.
        kind (str): Measurement kind looked up in ``MEASUREMENT_BOUNDS``.
        bounds (tuple, optional): Explicit ``(lo, hi)``; overrides ``kind``.

    Returns:
        HourlySeries: Same grid; values equal to a bound are kept.
    """
    lo, hi = _resolve_bounds(kind, bounds)
    values = series.values
    outside = values.notna() & ((values < lo) | (values > hi))
    if outside.any():
        logger.debug(f"{series.sensor_id}: {int(outside.sum())} values outside [{lo}, {hi}]")
    return series.with_values(values.mask(outside))


def robust_deviation(values: np.ndarray) -> float:
    """
    Median absolute deviation, with fallbacks when more than half the values tie.

    A zero MAD falls back to half the interquartile range, then to
    ``0.6745 * std`` (both equal the MAD of a normal sample).
    """
    mad = float(np.median(np.abs(values - np.median(values))))
    if mad > 0:
        return mad
    q1, q3 = np.percentile(values, [25, 75])
    if q3 > q1:
        return float(q3 - q1) / 2.0
    return 0.6745 * float(np.std(values))


def default_eps(values: np.ndarray) -> float:
    """Scale-adaptive DBSCAN radius: five robust deviations, never below ``EPS_FLOOR``."""
    return max(MAD_MULTIPLIER * robust_deviation(values), EPS_FLOOR)


def _outlier_mask(values: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit_predict(values.reshape(-1, 1))
    clustered = labels[labels >= 0]
    if clustered.size == 0:
        # Nothing dense enough to call normal; leave the batch alone.
        return np.zeros(values.shape, dtype=bool)
    sizes = np.bincount(clustered)
    keep = np.flatnonzero(sizes == sizes.max())
    return ~np.isin(labels, keep)


def dbscan_scrub(series: HourlySeries, eps: Optional[float] = None, min_pts: int = DBSCAN_MIN_PTS,
                 batch_len: int = BATCH_HOURS) -> HourlySeries:
    """
    Remove long abnormal excursions with 1-D DBSCAN per two-month batch.

    Within each batch the observed values are clustered; DBSCAN noise points and
    points outside the most populated cluster become NA. A minor cluster lies
    more than ``eps`` from the main one, so it is an excursion such as a stuck
    reading. Batches with fewer than ``min_pts`` observed values are left
    unchanged, and so is every value that belongs to the main cluster.

    Args:
        series (HourlySeries): Series to scrub.
        eps (float, optional): Neighbourhood radius; defaults per batch to
            ``default_eps`` of its observed values.
        min_pts (int): DBSCAN core-point support, one day by default.
        batch_len (int): Batch length in hours; the last batch may be shorter.
    """
    if eps is not None and not eps > 0:
        raise ConfigError("dbscan_eps", f"must be > 0, got {eps}")
    if min_pts < 1:
        raise ConfigError("dbscan_min_pts", f"must be >= 1, got {min_pts}")
    if batch_len < 1:
        raise ConfigError("dbscan_batch_hours", f"must be >= 1, got {batch_len}")

    values = series.values.to_numpy(dtype=np.float64, copy=True)
    removed = 0
    for start in range(0, len(values), batch_len):
        chunk = values[start:start + batch_len]
        observed = np.flatnonzero(~np.isnan(chunk))
        if observed.size < min_pts:
            continue
        obs_values = chunk[observed]
        batch_eps = eps if eps is not None else default_eps(obs_values)
        flagged = observed[_outlier_mask(obs_values, batch_eps, min_pts)]
        chunk[flagged] = np.nan
        removed += flagged.size
        logger.debug(f"{series.sensor_id} batch @{start}: eps={batch_eps:.4g}, "
                     f"{flagged.size}/{observed.size} flagged")
    if removed:
        logger.info(f"{series.sensor_id}: DBSCAN scrub removed {removed} values")
    return series.with_values(values)


def _unique_names(series: Sequence[HourlySeries]) -> List[str]:
    names, seen = [], {}
    for s in series:
        name = str(s.sensor_id)
        if name in seen:
            seen[name] += 1
            name = f"{name}_{seen[name]}"
        else:
            seen[name] = 0
        names.append(name)
    return names


def build_location(sensors: Sequence[HourlySeries], refs: Sequence[HourlySeries] = (),
                   location_id: str = "location") -> LocationDataset:
    """
    Align sensors on their union hourly grid and average the references.

    The reference at each hour is the mean of the reference stations observed at
    that hour; an hour with no observed reference stays NA. Reference hours
    outside the sensor grid are dropped.
    """
    if len(sensors) == 0:
        raise DataError("A location needs at least one sensor series")
    non_empty = [s.values for s in sensors if len(s)]
    if not non_empty:
        raise DataError("Every sensor series of the location is empty")
    start = min(v.index.min() for v in non_empty)
    end = max(v.index.max() for v in non_empty)
    grid = pd.date_range(start, end, freq="h")

    names = _unique_names(sensors)
    readings = pd.DataFrame(
        {name: s.values.reindex(grid) for name, s in zip(names, sensors)},
        index=grid,
    ).astype(np.float64)

    reference = None
    if len(refs):
        stacked = pd.concat([r.values.reindex(grid) for r in refs], axis=1)
        reference = stacked.mean(axis=1, skipna=True).astype(np.float64)
        reference.name = 'ref'

    logger.info(f"Built location '{location_id}': {len(grid)} hours, {len(names)} sensors, "
                f"{len(refs)} reference stations")
    return LocationDataset(readings, reference, location_id)


def eligibility_filter(location: LocationDataset, min_hours: int = 6000,
                       min_sensors: int = 1) -> LocationDataset:
    """
    Drop sensors with fewer than ``min_hours`` observed hours.

    Raises:
        DataError: If fewer than ``min_sensors`` sensors remain; ``details``
            holds the observed-hour count of every sensor.
    """
    counts = {name: int(c) for name, c in location.readings.notna().sum().items()}
    kept = [name for name, c in counts.items() if c >= min_hours]
    dropped = [name for name in counts if name not in kept]
    for name in dropped:
        logger.warning(f"Dropping sensor '{name}' of '{location.location_id}': "
                       f"{counts[name]} observed hours < {min_hours}")
    if len(kept) < min_sensors:
        raise DataError(
            f"Location '{location.location_id}' has {len(kept)} eligible sensors, needs {min_sensors}",
            {"counts": counts, "min_hours": min_hours, "min_sensors": min_sensors},
        )
    result = location.select(kept)
    result.notes.extend(f"dropped {name} ({counts[name]} hours)" for name in dropped)
    return result


def partition_location(location: LocationDataset,
                       test_fraction: float = 0.2) -> Tuple[LocationDataset, LocationDataset]:
    """
    Split a location chronologically into a training and a test part.

    The first ``1 - test_fraction`` of the hours train, the rest test, so no
    test hour precedes a training hour.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction", f"must lie in (0, 1), got {test_fraction}")
    n = len(location)
    cut = int(round(n * (1.0 - test_fraction)))
    if cut <= 0 or cut >= n:
        raise DataError(f"Cannot split {n} hours with test fraction {test_fraction}")
    keep = np.arange(n) < cut
    return location.rows(keep), location.rows(~keep)


class LocationTransformer:
    """
    Location data transformer.

    Runs every sensor through range validation and DBSCAN scrubbing, then builds
    and filters the location.

    Args:
        sensors (list): Hourly sensor series.
        refs (list): Hourly reference series, possibly empty.
        location_id (str): Name of the location.
        kind (str): Measurement kind for the range bounds.
        min_hours (int): Eligibility threshold in observed hours.
        min_sensors (int): Minimum number of eligible sensors.
        eps (float, optional): Fixed DBSCAN radius.
        min_pts (int): DBSCAN core-point support.
        batch_len (int): DBSCAN batch length in hours.
    """

    def __init__(self, sensors: Sequence[HourlySeries], refs: Sequence[HourlySeries] = (),
                 location_id: str = "location", kind: str = 'pm25', min_hours: int = 6000,
                 min_sensors: int = 1, eps: Optional[float] = None, min_pts: int = DBSCAN_MIN_PTS,
                 batch_len: int = BATCH_HOURS):
        self.sensors = list(sensors)
        self.refs = list(refs)
        self.location_id = location_id
        self.kind = kind
        self.min_hours = min_hours
        self.min_sensors = min_sensors
        self.eps = eps
        self.min_pts = min_pts
        self.batch_len = batch_len
        logger.info(f"Initialized transformer for '{location_id}' with {len(self.sensors)} sensors")

    def transform(self) -> LocationDataset:
        """
        Clean and assemble the location.

        Returns:
            LocationDataset: Aligned, scrubbed and filtered location.
        """
        logger.info("Starting location transformation")
        try:
            sensors = [self._clean(s) for s in self.sensors]
            refs = [range_validate(r, self.kind) for r in self.refs]
            location = build_location(sensors, refs, self.location_id)
            location = eligibility_filter(location, self.min_hours, self.min_sensors)
            logger.info(f"Location transformation completed: {location.n_sensors} sensors kept")
            return location
        except Exception as e:
            logger.error(f"Error transforming location: {str(e)}", exc_info=True)
            raise

    def _clean(self, series: HourlySeries) -> HourlySeries:
        before = series.observed_count
        series = range_validate(series, self.kind)
        series = dbscan_scrub(series, self.eps, self.min_pts, self.batch_len)
        logger.debug(f"{series.sensor_id}: {before} -> {series.observed_count} observed hours")
        return series
