import numpy as np
import pandas as pd
import pytest

from app.exceptions import ConfigError, DataError
from app.extract.extractor import LocationExtractor, read_location_csv, resample_hourly
from app.extract.series import RawSeries


def raw(stamps, values, sensor_id="s1"):
    return RawSeries(sensor_id, pd.DatetimeIndex(pd.to_datetime(stamps, utc=True)), np.asarray(values, dtype=float))


def test_samples_within_an_hour_are_averaged():
    hourly = resample_hourly(raw(["2021-01-01 10:05", "2021-01-01 10:35"], [4.0, 6.0]))
    assert len(hourly) == 1
    assert hourly.values.index[0] == pd.Timestamp("2021-01-01 10:00", tz="UTC")
    assert hourly.values.iloc[0] == 5.0


def test_hours_without_samples_are_missing():
    hourly = resample_hourly(raw(["2021-01-01 10:10", "2021-01-01 13:50"], [1.0, 2.0]))
    assert len(hourly) == 4
    assert hourly.values.isna().tolist() == [False, True, True, False]


def test_resample_matches_groupby_oracle(rng):
    offsets = np.sort(rng.choice(10 * 60, size=200, replace=False))
    stamps = pd.Timestamp("2022-05-01", tz="UTC") + pd.to_timedelta(offsets, unit="min")
    values = rng.normal(size=200)
    hourly = resample_hourly(RawSeries("a", pd.DatetimeIndex(stamps), values))
    expected = pd.Series(values, index=stamps).groupby(stamps.floor("h")).mean()
    for hour, value in expected.items():
        assert hourly.values[hour] == pytest.approx(value)
    assert hourly.observed_count == len(expected)


def test_empty_series():
    hourly = resample_hourly(raw([], []))
    assert len(hourly) == 0


def test_non_increasing_timestamps_rejected():
    with pytest.raises(DataError):
        raw(["2021-01-01 10:00", "2021-01-01 09:00"], [1.0, 2.0])


def test_manifest_extraction(tmp_path):
    (tmp_path / "a.csv").write_text("timestamp,value\n2021-01-01T00:10:00Z,2\n2021-01-01T00:40:00Z,4\n"
                                    "2021-01-01T01:15:00Z,\n2021-01-01T02:00:00Z,8\n")
    (tmp_path / "r.csv").write_text("timestamp,value\n2021-01-01T00:00:00Z,3\n")
    manifest = tmp_path / "site.env"
    manifest.write_text("LOCATION_ID=site\nSENSORS=a.csv\nREFERENCES=r.csv\nKIND=pm25\n")
    extractor = LocationExtractor(str(manifest))
    sensors, refs = extractor.extract()
    assert extractor.location_id == "site"
    assert sensors[0].values.tolist()[0] == 3.0
    assert np.isnan(sensors[0].values.iloc[1])
    assert refs[0].values.iloc[0] == 3.0


def test_manifest_without_sensors(tmp_path):
    manifest = tmp_path / "empty.env"
    manifest.write_text("LOCATION_ID=x\n")
    with pytest.raises(ConfigError):
        LocationExtractor(str(manifest))


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        LocationExtractor(str(tmp_path / "nope.env"))


def test_missing_sensor_file(tmp_path):
    manifest = tmp_path / "m.env"
    manifest.write_text("SENSORS=gone.csv\n")
    with pytest.raises(DataError):
        LocationExtractor(str(manifest)).extract()


def test_location_csv_ignores_output_columns(tmp_path):
    path = tmp_path / "corrected.csv"
    path.write_text("timestamp,s1,s2,ref,yhat_s1,ystd_s1,ylo_s1,yhi_s1,yhat,ystd\n"
                    "2021-01-01T00:00:00Z,1,,5,0,0,0,0,0,0\n"
                    "2021-01-01T01:00:00Z,2,3,,0,0,0,0,0,0\n")
    location = read_location_csv(str(path))
    assert location.sensor_ids == ["s1", "s2"]
    assert location.location_id == "corrected"
    np.testing.assert_array_equal(location.mask, [[1, 0], [1, 1]])
    assert location.reference.iloc[0] == 5.0
    assert np.isnan(location.reference.iloc[1])


def test_location_csv_needs_timestamp(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s1\n0,1\n")
    with pytest.raises(DataError):
        read_location_csv(str(path))


def test_location_csv_fills_missing_hours(tmp_path):
    path = tmp_path / "gapped.csv"
    path.write_text("timestamp,s1,ref\n"
                    "2021-01-01T03:00:00Z,4,40\n"
                    "2021-01-01T00:00:00Z,1,10\n"
                    "2021-01-01T01:20:00Z,2,20\n")
    location = read_location_csv(str(path))
    assert len(location) == 4
    assert location.readings.index[0] == pd.Timestamp("2021-01-01 00:00", tz="UTC")
    assert location.readings.index[-1] == pd.Timestamp("2021-01-01 03:00", tz="UTC")
    np.testing.assert_array_equal(location.readings["s1"].isna().to_numpy(), [False, False, True, False])
    assert location.reference.iloc[1] == 20.0 and np.isnan(location.reference.iloc[2])


def test_location_csv_rejects_repeated_hours(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("timestamp,s1\n2021-01-01T00:00:00Z,1\n2021-01-01T00:30:00Z,2\n")
    with pytest.raises(DataError):
        read_location_csv(str(path))


def test_resampling_is_idempotent(rng):
    offsets = np.sort(rng.choice(20 * 60, size=150, replace=False))
    stamps = pd.Timestamp("2022-05-01", tz="UTC") + pd.to_timedelta(offsets, unit="min")
    once = resample_hourly(RawSeries("a", pd.DatetimeIndex(stamps), rng.normal(size=150)))
    twice = resample_hourly(once)
    pd.testing.assert_series_equal(once.values, twice.values)
