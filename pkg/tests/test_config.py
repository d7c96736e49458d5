import json

import pytest

from app.config import Config, RunConfig
from app.exceptions import ConfigError


def test_defaults_follow_the_published_recipe():
    cfg = Config(environ={}).resolve()
    assert (cfg.alpha, cfg.beta_z, cfg.beta_y) == (1.0, 10.0, 0.1)
    assert cfg.epochs == 100 and cfg.batch_size == 64 and cfg.learning_rate == 1e-6
    assert cfg.latent_dim == 4 and cfg.hidden_dim == 32
    assert cfg.min_hours == 6000


def test_layers_override_in_order(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# run\nEPOCHS=40\nLEARNING_RATE=0.003\nSEEDS=1,2\n")
    environ = {"VELI_EPOCHS": "7", "VELI_BATCH_SIZE": "16", "HOME": "/root"}
    cfg = Config(environ).resolve(str(path), {"learning_rate": 0.01})
    assert cfg.batch_size == 16
    assert cfg.epochs == 40
    assert cfg.learning_rate == 0.01
    assert cfg.seeds == (1, 2)


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "bad.env"
    path.write_text("EPOCH=3\n")
    with pytest.raises(ConfigError) as err:
        Config(environ={}).resolve(str(path))
    assert err.value.field == "EPOCH"
    with pytest.raises(ConfigError):
        Config(environ={"VELI_COLOUR": "red"}).resolve()


@pytest.mark.parametrize("key,value", [("EPOCHS", "many"), ("SAMPLE_LATENT", "perhaps"), ("BATCH_SIZE", "2.5")])
def test_unparseable_values(tmp_path, key, value):
    path = tmp_path / "bad.env"
    path.write_text(f"{key}={value}\n")
    with pytest.raises(ConfigError) as err:
        Config(environ={}).resolve(str(path))
    assert err.value.field == key.lower()


def test_empty_optional_means_unset(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("DBSCAN_EPS=\nKALMAN_Q=0.5\n")
    cfg = Config(environ={}).resolve(str(path))
    assert cfg.dbscan_eps is None
    assert cfg.kalman_q == 0.5


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        Config(environ={}).resolve(str(tmp_path / "absent.env"))


def test_manifest_is_accepted_as_config(tmp_path):
    original = RunConfig(epochs=12, seeds=(3, 4), dbscan_eps=2.5, sample_latent=True)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"config": original.to_dict(), "config_hash": original.hash()}))
    restored = Config(environ={}).resolve(str(path))
    assert restored == original
    assert restored.hash() == original.hash()


def test_hash_ignores_paths():
    assert RunConfig(out="a").hash() == RunConfig(out="b").hash()
    assert RunConfig(seed=1).hash() != RunConfig(seed=2).hash()


def test_invalid_fusion():
    with pytest.raises(ConfigError):
        RunConfig(fusion="mode")


def test_experiment_settings_mapping():
    settings = RunConfig(alpha=0.5, epochs=3, pca_components=2, test_fraction=0.3).experiment_settings()
    assert settings.weights.alpha == 0.5
    assert settings.train.epochs == 3
    assert settings.pca.n_components == 2
    assert settings.test_fraction == 0.3
    assert settings.eps_grid[:3] == (0.0, 0.25, 0.5)
    assert settings.eps_grid[-1] == 25.0


def test_custom_eps_grid():
    assert RunConfig(eps_max=1.0, eps_step=0.5).eps_grid() == (0.0, 0.5, 1.0)


def test_outlier_bound_setting(tmp_path):
    assert RunConfig().experiment_settings().outlier_bound == 4.0
    path = tmp_path / "run.env"
    path.write_text("OUTLIER_BOUND=\n")
    assert Config(environ={}).resolve(str(path)).experiment_settings().outlier_bound is None
    with pytest.raises(ConfigError) as err:
        RunConfig(outlier_bound=-1.0)
    assert err.value.field == "outlier_bound"


def test_weight_scales_per_weight_or_shared():
    assert RunConfig(ablation="loss_weight_sweep").weight_scales() == (0.5, 1.0, 2.0)
    cfg = Config(environ={}).resolve(overrides={"beta_y_scales": "0.5,2", "ablation": "loss_weight_sweep"})
    assert cfg.weight_scales() == {"beta_y": (0.5, 2.0)}
