"""
Time-series containers shared by the extraction and transformation stages.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from app.exceptions import DataError


@dataclass
class RawSeries:
    """Readings of one sensor at its native, irregular frequency."""

    sensor_id: str
    timestamps: pd.DatetimeIndex
    values: np.ndarray

    def __post_init__(self):
        self.timestamps = pd.DatetimeIndex(self.timestamps)
        if self.timestamps.tz is None:
            self.timestamps = self.timestamps.tz_localize("UTC")
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.timestamps) != len(self.values):
            raise DataError(f"Sensor '{self.sensor_id}': {len(self.timestamps)} timestamps "
                            f"for {len(self.values)} values")
        if len(self.timestamps) > 1 and not (np.diff(self.timestamps.asi8) > 0).all():
            raise DataError(f"Sensor '{self.sensor_id}': timestamps must be strictly increasing")

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=self.timestamps, name=self.sensor_id)


@dataclass
class HourlySeries:
    """
    One sensor on a gap-free hourly UTC grid; missing hours hold NaN.

    ``values`` is a float Series indexed by hour.
    """

    sensor_id: str
    values: pd.Series

    def __post_init__(self):
        values = self.values.astype(np.float64)
        index = pd.DatetimeIndex(values.index)
        if index.tz is None:
            index = index.tz_localize("UTC")
        values.index = index
        if len(values):
            full = pd.date_range(index.min(), index.max(), freq="h")
            values = values.reindex(full)
        values.name = self.sensor_id
        self.values = values

    @property
    def observed_count(self) -> int:
        return int(self.values.notna().sum())

    def __len__(self) -> int:
        return len(self.values)

    def with_values(self, values) -> 'HourlySeries':
        return HourlySeries(self.sensor_id, pd.Series(values, index=self.values.index))


@dataclass
class LocationDataset:
    """
    Temporally aligned sensors of one site plus an optional reference series.

    ``readings`` is a ``(T, d)`` DataFrame on an hourly UTC index with one column
    per sensor; NaN marks a missing reading.
    """

    readings: pd.DataFrame
    reference: Optional[pd.Series] = None
    location_id: str = "location"
    notes: List[str] = field(default_factory=list)

    @property
    def sensor_ids(self) -> List[str]:
        return [str(c) for c in self.readings.columns]

    @property
    def n_sensors(self) -> int:
        return self.readings.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """Observation mask psi: 1 where a reading is present, 0 where it is NA."""
        return self.readings.notna().to_numpy(dtype=np.float64)

    @property
    def values(self) -> np.ndarray:
        return self.readings.to_numpy(dtype=np.float64)

    def __len__(self) -> int:
        return len(self.readings)

    def select(self, columns) -> 'LocationDataset':
        return LocationDataset(self.readings[list(columns)].copy(), self.reference, self.location_id, list(self.notes))

    def rows(self, keep) -> 'LocationDataset':
        keep = np.asarray(keep)
        ref = self.reference[keep] if self.reference is not None else None
        return LocationDataset(self.readings[keep].copy(), ref, self.location_id, list(self.notes))

    def with_readings(self, values: np.ndarray) -> 'LocationDataset':
        frame = pd.DataFrame(values, index=self.readings.index, columns=self.readings.columns)
        return LocationDataset(frame, self.reference, self.location_id, list(self.notes))
