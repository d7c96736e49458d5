import numpy as np
import pandas as pd
import pytest

from app.evaluate.experiment import ExperimentSettings
from app.extract.series import HourlySeries, LocationDataset
from app.model.trainer import TrainConfig
from app.model.veli import SnapshotBatch, VeliModel
from app.synth.generator import BaseSignalSpec, generate_location, noise_preset
from app.transform.standardize import Standardizer


def hourly(values, start="2021-03-01", sensor_id="s1") -> HourlySeries:
    index = pd.date_range(start, periods=len(values), freq="h", tz="UTC")
    return HourlySeries(sensor_id, pd.Series(np.asarray(values, dtype=np.float64), index=index))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return VeliModel(n_sensors=3, latent_dim=2, hidden_dim=4, seed=7)


@pytest.fixture
def tiny_batch(rng):
    x = rng.normal(size=(5, 3))
    mask = np.ones((5, 3))
    mask[1, 2] = 0.0
    mask[3, 0] = 0.0
    return SnapshotBatch(x, mask)


@pytest.fixture
def small_location() -> LocationDataset:
    """300 synthetic hours, 10 channels, realistic noise, base signal as reference."""
    synthetic = generate_location(BaseSignalSpec(length=300), noise_preset('realistic'), channels=10, seed=3)
    return synthetic.to_location("small")


@pytest.fixture
def fast_settings() -> ExperimentSettings:
    return ExperimentSettings(
        hidden_dim=8,
        train=TrainConfig(epochs=2, batch_size=64, learning_rate=1e-3),
        finetune=TrainConfig(epochs=1, batch_size=64, learning_rate=1e-3),
        baselines=True,
    )


@pytest.fixture
def trained_small(small_location, fast_settings):
    from app.evaluate.experiment import train_on_location
    return train_on_location(small_location, fast_settings, seed=0).model


@pytest.fixture
def fitted_model(tiny_model, rng):
    tiny_model.standardizer = Standardizer.fit(rng.normal(10.0, 2.0, size=(50, 3)))
    return tiny_model
