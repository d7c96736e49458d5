"""
Data extraction for the Veli correction toolkit.

Reads raw per-sensor CSV files listed in a location manifest, resamples them to
hourly means, and reads already-aligned location CSV files.
"""

import logging
import os
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from app.exceptions import ConfigError, DataError
from app.extract.series import HourlySeries, LocationDataset, RawSeries

logger = logging.getLogger(__name__)

TIMESTAMP_COLUMN = 'timestamp'
REFERENCE_COLUMN = 'ref'
OUTPUT_PREFIXES = ('yhat', 'ystd', 'ylo', 'yhi')


def resample_hourly(series: Union[RawSeries, HourlySeries]) -> HourlySeries:
    """
    Average every sensor's samples per UTC hour.

    Each hour ``[h, h+1)`` gets the mean of the samples stamped inside it; hours
    without a sample are NaN. An empty input yields an empty series.
    """
    if isinstance(series, HourlySeries):
        values = series.values
        sensor_id = series.sensor_id
    else:
        values = series.to_series()
        sensor_id = series.sensor_id
    if values.empty:
        return HourlySeries(sensor_id, pd.Series([], index=pd.DatetimeIndex([], tz="UTC"), dtype=np.float64))
    hourly = values.resample("h").mean()
    return HourlySeries(sensor_id, hourly)


def _parse_timestamps(column: pd.Series, path: str) -> pd.DatetimeIndex:
    try:
        return pd.DatetimeIndex(pd.to_datetime(column, utc=True))
    except (ValueError, TypeError) as e:
        raise DataError(f"{path}: cannot parse timestamps: {e}")


class LocationExtractor:
    """
    Location data extractor.

    A manifest is a flat ``KEY=value`` file::

        LOCATION_ID=utrecht
        SENSORS=raw/s1.csv,raw/s2.csv
        REFERENCES=raw/ref_a.csv,raw/ref_b.csv
        KIND=pm25

    Paths are relative to the manifest. Raw sensor files have the header
    ``timestamp,value``; an empty value cell is NA.

    Args:
        manifest_path (str, optional): Manifest to extract from.
    """

    def __init__(self, manifest_path: Optional[str] = None):
        self.manifest_path = manifest_path
        self.manifest: Dict[str, str] = {}
        if manifest_path is not None:
            self.manifest = self.load_manifest(manifest_path)
        logger.info(f"Initialized extractor for manifest {manifest_path}")

    @staticmethod
    def load_manifest(path: str) -> Dict[str, str]:
        if not os.path.exists(path):
            raise ConfigError("manifest", f"file not found: {path}")
        values = {k.upper(): (v or "") for k, v in dotenv_values(path).items()}
        if not values.get("SENSORS"):
            raise ConfigError("SENSORS", f"manifest {path} lists no sensor files")
        return values

    @property
    def location_id(self) -> str:
        default = os.path.splitext(os.path.basename(self.manifest_path or "location"))[0]
        return self.manifest.get("LOCATION_ID") or default

    @property
    def kind(self) -> str:
        return self.manifest.get("KIND", "pm25").lower()

    def _paths(self, key: str) -> List[str]:
        base = os.path.dirname(os.path.abspath(self.manifest_path)) if self.manifest_path else ""
        entries = [p.strip() for p in self.manifest.get(key, "").split(",") if p.strip()]
        return [p if os.path.isabs(p) else os.path.join(base, p) for p in entries]

    def read_raw_series(self, path: str, sensor_id: Optional[str] = None) -> RawSeries:
        """Read one ``timestamp,value`` file."""
        logger.info(f"Reading raw series from {path}")
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError:
            raise DataError(f"Sensor file not found: {path}")
        if TIMESTAMP_COLUMN not in frame.columns or len(frame.columns) < 2:
            raise DataError(f"{path}: expected header 'timestamp,value'", {"columns": list(frame.columns)})
        value_column = [c for c in frame.columns if c != TIMESTAMP_COLUMN][0]
        stamps = _parse_timestamps(frame[TIMESTAMP_COLUMN], path)
        values = pd.to_numeric(frame[value_column], errors='coerce').to_numpy(dtype=np.float64)
        order = np.argsort(stamps.asi8, kind="stable")
        sensor_id = sensor_id or os.path.splitext(os.path.basename(path))[0]
        return RawSeries(sensor_id, stamps[order], values[order])

    def extract(self) -> Tuple[List[HourlySeries], List[HourlySeries]]:
        """
        Read and resample every sensor and reference file of the manifest.

        Returns:
            tuple: ``(sensor series, reference series)``, both hourly.
        """
        logger.info(f"Extracting location '{self.location_id}'")
        try:
            sensors = [resample_hourly(self.read_raw_series(p)) for p in self._paths("SENSORS")]
            refs = [resample_hourly(self.read_raw_series(p)) for p in self._paths("REFERENCES")]
            logger.info(f"Extracted {len(sensors)} sensors and {len(refs)} reference series")
            for s in sensors:
                logger.debug(f"  {s.sensor_id}: {len(s)} hours, {s.observed_count} observed")
            return sensors, refs
        except Exception as e:
            logger.error(f"Error extracting location data: {str(e)}", exc_info=True)
            raise


def read_location_csv(path: str, location_id: Optional[str] = None) -> LocationDataset:
    """
    Read an aligned hourly location file ``timestamp,s1,...,sd[,ref]``.

    Output columns (``yhat*``, ``ystd*``, ``ylo*``, ``yhi*``) are ignored, so a
    corrected file can be read back as its input location. Rows are floored to
    the hour, sorted and reindexed to a gap-free hourly grid; missing hours
    become NA.

    Raises:
        DataError: On a missing file or column, unparseable timestamps or a
            repeated hour.
    """
    logger.info(f"Reading location CSV {path}")
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"Location file not found: {path}")
    if TIMESTAMP_COLUMN not in frame.columns:
        raise DataError(f"{path}: missing '{TIMESTAMP_COLUMN}' column", {"columns": list(frame.columns)})
    index = _parse_timestamps(frame[TIMESTAMP_COLUMN], path).floor("h")
    if index.has_duplicates:
        raise DataError(f"{path}: duplicate hours", {"hours": [str(t) for t in index[index.duplicated()][:5]]})
    sensor_columns = [
        c for c in frame.columns
        if c not in (TIMESTAMP_COLUMN, REFERENCE_COLUMN) and not str(c).startswith(OUTPUT_PREFIXES)
    ]
    if not sensor_columns:
        raise DataError(f"{path}: no sensor columns")
    readings = frame[sensor_columns].apply(pd.to_numeric, errors='coerce').astype(np.float64)
    readings.index = index
    reference = None
    if REFERENCE_COLUMN in frame.columns:
        reference = pd.to_numeric(frame[REFERENCE_COLUMN], errors='coerce').astype(np.float64)
        reference.index = index
        reference.name = REFERENCE_COLUMN
    if len(index):
        # Sorted onto a gap-free hourly grid so positional lags are hours.
        readings = readings.sort_index().asfreq("h")
        if reference is not None:
            reference = reference.sort_index().asfreq("h")
    location_id = location_id or os.path.splitext(os.path.basename(path))[0]
    logger.info(f"Read {len(readings)} hours x {len(sensor_columns)} sensors for '{location_id}'")
    return LocationDataset(readings, reference, location_id)
