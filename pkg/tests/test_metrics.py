import numpy as np
import pandas as pd
import pytest

from app.evaluate.metrics import (
    DEFAULT_EPS_GRID,
    autocorrelation,
    hit_rate_curve,
    histogram_counts,
    mae,
    seed_statistics,
    twelve_hour_average,
)
from app.evaluate.report import EvalReport
from app.exceptions import DataError


def test_mae_examples():
    assert mae([1.0, 2.0], [2.0, 4.0]) == 1.5
    assert mae([2.0, 4.0], [1.0, 2.0]) == 1.5
    assert mae([1.0, np.nan, 3.0], [1.0, 5.0, np.nan]) == 0.0


def test_mae_needs_co_observed_hours():
    with pytest.raises(DataError):
        mae([np.nan, 1.0], [1.0, np.nan])
    with pytest.raises(DataError):
        mae([1.0], [1.0, 2.0])


def test_hit_rate_is_monotone_and_reaches_one(rng):
    ref = rng.normal(size=300)
    pred = ref + rng.normal(scale=3.0, size=300)
    curve = hit_rate_curve(pred, ref)
    fractions = [f for _, f in curve]
    assert len(curve) == len(DEFAULT_EPS_GRID)
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))
    assert fractions[-1] == 1.0


def test_hit_rate_boundary_is_inclusive():
    curve = dict(hit_rate_curve([1.0, 2.0, 3.5], [1.0, 1.0, 1.0], [0.0, 1.0, 2.5]))
    assert curve[0.0] == pytest.approx(1 / 3)
    assert curve[1.0] == pytest.approx(2 / 3)
    assert curve[2.5] == 1.0


def test_periodic_signal_autocorrelation():
    series = np.sin(2 * np.pi * np.arange(24 * 30) / 24)
    acf = autocorrelation(series, max_lag=24)
    assert acf.shape == (24,)
    assert acf[23] == pytest.approx(1.0, abs=1e-9)
    assert acf[11] == pytest.approx(-1.0, abs=1e-9)


def test_ar1_autocorrelation(rng):
    phi, n = 0.8, 20000
    x = np.zeros(n)
    noise = rng.normal(size=n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + noise[t]
    acf = autocorrelation(x, max_lag=10)
    np.testing.assert_allclose(acf, phi ** np.arange(1, 11), atol=0.05)
    assert np.all(np.abs(acf) <= 1.0)


def test_autocorrelation_skips_missing_pairs(rng):
    series = np.sin(2 * np.pi * np.arange(500) / 24)
    series[rng.choice(500, 50, replace=False)] = np.nan
    assert autocorrelation(series, max_lag=24)[23] == pytest.approx(1.0, abs=1e-9)


def test_constant_series_autocorrelation_raises():
    with pytest.raises(DataError):
        autocorrelation(np.full(100, 3.0))


def test_seed_statistics():
    mean, std = seed_statistics([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert std == pytest.approx(np.sqrt(sum((v - 2.5) ** 2 for v in [1, 2, 3, 4]) / 3))
    assert seed_statistics([5.0]) == (5.0, 0.0)
    with pytest.raises(DataError):
        seed_statistics([])


def test_histogram_counts_cover_every_value(rng):
    values = np.append(rng.normal(size=500), np.nan)
    frame = histogram_counts(values)
    assert list(frame.columns) == ["bin_left", "bin_right", "count", "density"]
    assert frame["count"].sum() == 500
    widths = frame["bin_right"] - frame["bin_left"]
    assert (frame["density"] * widths).sum() == pytest.approx(1.0)


def test_twelve_hour_average():
    index = pd.date_range("2021-01-01", periods=24, freq="h", tz="UTC")
    averaged = twelve_hour_average(pd.Series(np.arange(24.0), index=index))
    assert averaged.tolist() == [5.5, 17.5]


def _report():
    return EvalReport(
        location_id="site",
        mae_raw_mean=4.25,
        mae_method=1.5,
        hit_rate=[(0.0, 0.1), (0.25, 0.5), (0.5, 1.0)],
        autocorr=np.array([0.9, 0.75]),
        seed_stats=(1.5, 0.2),
        mae_pca=3.0,
        mae_kf=None,
        recovered=True,
        n_hours=100,
        n_sensors=3,
        hit_rate_raw=[(0.0, 0.0), (0.25, 0.2), (0.5, 0.4)],
        autocorr_ref=np.array([0.95, 0.8]),
        extra={"n": 3},
    )


def test_report_text_round_trip():
    report = _report()
    text = report.to_text()
    assert text.startswith("[summary]\nlocation_id=site\n")
    assert "mae_kf=\n" in text
    assert "recovered=true\n" in text
    restored = EvalReport.from_text(text)
    assert restored.mae_method == 1.5
    assert restored.mae_kf is None
    assert restored.seed_stats == (1.5, 0.2)
    assert restored.extra == {"n": 3}
    assert restored.hit_rate == report.hit_rate
    np.testing.assert_array_equal(restored.autocorr_ref, report.autocorr_ref)
    assert restored.to_text() == text


def test_report_rejects_decreasing_hit_rate():
    with pytest.raises(DataError):
        EvalReport("x", 1.0, 1.0, [(0.0, 0.5), (1.0, 0.4)], np.zeros(1))
