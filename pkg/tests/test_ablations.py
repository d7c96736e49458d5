import numpy as np
import pytest

from app.evaluate.ablations import (
    AblationSpec,
    inject_na,
    run_na_injection,
    run_sensor_subset,
    run_seed_repeat,
    seed_repeat,
    weight_grid,
)
from app.exceptions import ConfigError, DataError
from app.synth.generator import BaseSignalSpec, generate_location, noise_preset


@pytest.fixture
def complete_location():
    return generate_location(BaseSignalSpec(length=120), noise_preset("clean"), channels=6, seed=0).to_location()


@pytest.mark.parametrize("n", [1, 3, 5])
def test_inject_na_exact_count(complete_location, n):
    injected = inject_na(complete_location, n, np.random.default_rng(n))
    assert (np.isnan(injected.values).sum(axis=1) == n).all()
    observed = ~np.isnan(injected.values)
    np.testing.assert_array_equal(injected.values[observed], complete_location.values[observed])


def test_inject_na_bounds(complete_location, rng):
    with pytest.raises(ConfigError):
        inject_na(complete_location, 6, rng)
    unchanged = inject_na(complete_location, 0, rng)
    np.testing.assert_array_equal(unchanged.values, complete_location.values)


def test_inject_na_is_seeded(complete_location):
    a = inject_na(complete_location, 2, np.random.default_rng(4))
    b = inject_na(complete_location, 2, np.random.default_rng(4))
    np.testing.assert_array_equal(np.isnan(a.values), np.isnan(b.values))


def test_weight_grid_sizes():
    grid = weight_grid((0.5, 1.0, 2.0))
    assert len(grid) == 9
    assert (0.5, 1.0, 1.0) in grid and (1.0, 1.0, 2.0) in grid
    assert weight_grid((0.5, 2.0), joint=True) == [(0.5, 0.5, 0.5), (2.0, 2.0, 2.0)]


def test_zero_scale_is_rejected():
    with pytest.raises(ConfigError) as err:
        weight_grid((0.0, 1.0))
    assert err.value.field == "ablation_values"
    with pytest.raises(ConfigError):
        weight_grid((-1.0,))


@pytest.mark.parametrize("name", ["alpha", "beta_z", "beta_y"])
def test_zero_scale_names_its_weight(name):
    scales = {"alpha": (1.0,), "beta_z": (1.0,), "beta_y": (1.0,)}
    scales[name] = (0.5, 0.0)
    with pytest.raises(ConfigError) as err:
        weight_grid(scales)
    assert err.value.field == f"{name}_scales"


def test_per_weight_scale_lists():
    grid = weight_grid({"alpha": (0.5,), "beta_y": (0.1, 10.0)})
    assert grid == [(0.5, 1.0, 1.0), (1.0, 1.0, 0.1), (1.0, 1.0, 10.0)]
    with pytest.raises(ConfigError):
        weight_grid({"gamma": (1.0,)})
    with pytest.raises(ConfigError):
        weight_grid({"alpha": (2.0,)}, joint=True)


def test_seed_repeat_over_trainings_varies(small_location, fast_settings):
    report = run_seed_repeat(small_location, seeds=(0, 1, 2, 3, 4), settings=fast_settings)
    mean, std = report.seed_stats
    assert np.isfinite(mean)
    assert std > 0
    assert report.extra["seeds"] == "0,1,2,3,4"


def test_seed_repeat_statistics():
    mean, std = seed_repeat(lambda seed: float(seed), seeds=(1, 2, 3))
    assert mean == 2.0
    assert std == pytest.approx(1.0)
    assert seed_repeat(lambda seed: 4.2, seeds=(7,)) == (4.2, 0.0)


def test_ablation_spec_defaults():
    assert AblationSpec("na_injection").resolved_values() == (1, 3, 5, 7, 9)
    assert AblationSpec("seed_repeat", (3.0,)).resolved_values() == (3.0,)
    with pytest.raises(ConfigError):
        AblationSpec("dropout")
    with pytest.raises(ConfigError):
        AblationSpec("sensor_subset", (0,))


def test_na_injection_report(trained_small, small_location, fast_settings):
    report = run_na_injection(small_location, trained_small, 3, seed=1, settings=fast_settings)
    assert report.experiment == "na_injection"
    assert report.extra == {"n": 3}


def test_sensor_subset_reports(small_location, fast_settings):
    reports = run_sensor_subset(small_location, sizes=(3,), settings=fast_settings)
    assert set(reports) == {3}
    assert reports[3].n_sensors == 3
    assert reports[3].extra["size"] == 3


def test_sensor_subset_larger_than_location(small_location, fast_settings):
    with pytest.raises(DataError):
        run_sensor_subset(small_location, sizes=(11,), settings=fast_settings)


@pytest.fixture(scope="module")
def synthetic_run():
    from app.evaluate.experiment import ExperimentSettings, train_on_location
    from app.model.trainer import TrainConfig

    location = generate_location(BaseSignalSpec(length=4000), noise_preset("realistic"), channels=10,
                                 seed=0).to_location("synthetic")
    settings = ExperimentSettings(train=TrainConfig(epochs=40, learning_rate=3e-3), baselines=False)
    return location, settings, train_on_location(location, settings, seed=0).model


@pytest.mark.slow
def test_more_missing_channels_do_not_help(synthetic_run):
    location, settings, model = synthetic_run
    maes = [run_na_injection(location, model, n, seed=0, settings=settings).mae_method for n in (1, 3, 5, 7, 9)]
    assert maes[-1] >= maes[0]
    assert sum(b < a for a, b in zip(maes, maes[1:])) <= 1


@pytest.mark.slow
def test_three_sensors_stay_close_to_ten(synthetic_run):
    location, settings, _ = synthetic_run
    reports = run_sensor_subset(location, sizes=(3, 10), settings=settings)
    assert reports[3].mae_method <= 1.5 * reports[10].mae_method


@pytest.mark.slow
def test_loss_weight_grid_is_stable(synthetic_run):
    from app.evaluate.ablations import run_loss_weight_sweep

    location, settings, _ = synthetic_run
    table = run_loss_weight_sweep(location, settings=settings)
    assert len(table) == 9
    default = table[(table.alpha_scale == 1) & (table.beta_z_scale == 1) & (table.beta_y_scale == 1)]
    reference = default["mae_method"].iloc[0]
    assert (table["mae_method"] <= 1.2 * reference).all()
