import numpy as np
import pytest

from app.exceptions import ConfigError, DataError
from app.model.trainer import TrainConfig, fine_tune, train
from app.model.veli import SnapshotBatch, VeliModel


@pytest.fixture
def dataset(rng):
    base = np.sin(np.arange(120) * 2 * np.pi / 24)
    x = base[:, None] + rng.normal(scale=0.3, size=(120, 3))
    mask = (rng.random((120, 3)) > 0.1).astype(float)
    mask[:, 1] = 1.0
    return SnapshotBatch(x, mask)


def test_zero_epochs_leave_parameters_unchanged(tiny_model, dataset):
    before = tiny_model.copy_parameters()
    result = train(tiny_model, dataset, TrainConfig(epochs=0))
    assert result.history == []
    for name, array in tiny_model.parameters().items():
        np.testing.assert_array_equal(array, before[name])


def test_same_seed_gives_identical_models(dataset):
    config = TrainConfig(epochs=2, batch_size=32, learning_rate=1e-3, seed=5)
    a = train(VeliModel(3, 2, 4, seed=1), dataset, config)
    b = train(VeliModel(3, 2, 4, seed=1), dataset, config)
    assert a.model.to_checkpoint() == b.model.to_checkpoint()
    assert [h.total for h in a.history] == [h.total for h in b.history]
    assert len(a.history) == 2


def test_training_changes_every_head(tiny_model, dataset):
    before = tiny_model.copy_parameters()
    train(tiny_model, dataset, TrainConfig(epochs=1, learning_rate=1e-2))
    changed = {name.split(".")[0] for name, array in tiny_model.parameters().items()
               if not np.array_equal(array, before[name])}
    assert changed == {"encoder", "prior_z", "decoder", "prior_y", "noise"}


def test_fine_tune_updates_only_the_encoder(tiny_model, dataset):
    before = tiny_model.copy_parameters()
    fine_tune(tiny_model, dataset, TrainConfig(epochs=2, learning_rate=1e-2))
    after = tiny_model.parameters()
    for name, array in after.items():
        if name.startswith("encoder."):
            continue
        assert array.tobytes() == before[name].tobytes(), name
    assert any(not np.array_equal(after[k], before[k]) for k in after if k.startswith("encoder."))


def test_empty_dataset_raises(tiny_model):
    with pytest.raises(DataError):
        train(tiny_model, SnapshotBatch(np.zeros((0, 3)), np.zeros((0, 3))), TrainConfig(epochs=1))


def test_fully_masked_snapshot_raises(tiny_model):
    mask = np.ones((4, 3))
    mask[2] = 0.0
    with pytest.raises(DataError) as err:
        train(tiny_model, SnapshotBatch(np.zeros((4, 3)), mask), TrainConfig(epochs=1))
    assert err.value.details["rows"] == [2]


def test_unknown_trainable_head(tiny_model, dataset):
    with pytest.raises(ConfigError):
        train(tiny_model, dataset, TrainConfig(epochs=1), trainable=("encoder", "critic"))


@pytest.mark.parametrize("kwargs", [{"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0.0}])
def test_invalid_train_config(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


@pytest.mark.slow
def test_loss_decreases_over_training(dataset):
    model = VeliModel(3, 2, 16, seed=0)
    result = train(model, dataset, TrainConfig(epochs=60, batch_size=32, learning_rate=3e-3))
    first = np.mean([h.total for h in result.history[:5]])
    last = np.mean([h.total for h in result.history[-5:]])
    assert last < first
