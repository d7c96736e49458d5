"""
Configuration module for the Veli correction toolkit.

Settings resolve in four layers, later ones winning:

    1. ``RunConfig`` field defaults
    2. environment variables ``VELI_<FIELD>``
    3. a run configuration file (``--config``)
    4. command-line flags

A run configuration file uses the dotenv grammar, one ``KEY=value`` per line
with ``#`` comments; keys are upper-case field names::

    EPOCHS=40
    LEARNING_RATE=0.003
    NOISE=realistic
    SEEDS=0,1,2,3,4

A ``manifest.json`` written by an earlier run is accepted as well; its
``config`` object is used as the file layer. Empty values mean "unset".
"""

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, fields
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from app.baselines.kalman import KalmanConfig
from app.baselines.pca import PcaConfig
from app.evaluate.ablations import WEIGHT_NAMES, AblationSpec
from app.evaluate.experiment import ExperimentSettings
from app.evaluate.metrics import DEFAULT_EPS_GRID
from app.exceptions import ConfigError
from app.model.inference import FUSION_METHODS
from app.model.trainer import TrainConfig
from app.model.veli import DEFAULT_OUTLIER_BOUND, LossWeights
from app.nn.checkpoint import config_hash
from app.synth.generator import BaseSignalSpec, NoiseConfig, noise_preset

ENV_PREFIX = 'VELI_'


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one run; defaults follow the published recipe."""

    # Paths
    input: str = ""
    out: str = "runs/latest"
    checkpoint: str = ""
    log_file: str = "logs/veli.log"
    log_level: str = "INFO"

    # Randomness
    seed: int = 0
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)

    # Model and training
    latent_dim: int = 4
    hidden_dim: int = 32
    mc_samples: int = 1
    alpha: float = 1.0
    beta_z: float = 10.0
    beta_y: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-6
    finetune_epochs: int = 30
    fusion: str = "median"
    sample_latent: bool = False
    outlier_bound: Optional[float] = DEFAULT_OUTLIER_BOUND

    # Synthetic data
    base: str = "sinusoid"
    base_offset: float = 2.0
    base_max: float = 30.0
    base_period: float = 48.0
    base_rate: float = 1.0 / 12.0
    length: int = 4000
    channels: int = 10
    noise: str = "realistic"
    reference_path: str = ""

    # Preprocessing
    kind: str = "pm25"
    min_hours: int = 6000
    min_sensors: int = 1
    dbscan_eps: Optional[float] = None
    dbscan_min_pts: int = 24
    dbscan_batch_hours: int = 1460
    test_fraction: float = 0.0

    # Baselines and evaluation
    knn_k: int = 5
    pca_components: Optional[int] = None
    pca_variance: float = 0.9
    kalman_q: Optional[float] = None
    max_lag: int = 48
    eps_max: float = 25.0
    eps_step: float = 0.25
    recovery_ratio: float = 0.9
    twelve_hour: bool = False
    baselines: bool = True

    # Ablations
    ablation: str = "na_injection"
    ablation_values: Tuple[float, ...] = ()
    joint_scales: bool = False
    alpha_scales: Tuple[float, ...] = ()
    beta_z_scales: Tuple[float, ...] = ()
    beta_y_scales: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.fusion not in FUSION_METHODS:
            raise ConfigError("fusion", f"must be one of {FUSION_METHODS}, got '{self.fusion}'")
        if self.test_fraction and not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction", f"must be 0 (no split) or lie in (0, 1), got {self.test_fraction}")
        if not self.eps_step > 0 or self.eps_max < 0:
            raise ConfigError("eps_step", "need eps_step > 0 and eps_max >= 0")
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if self.outlier_bound is not None and not self.outlier_bound > 0:
            raise ConfigError("outlier_bound", f"must be > 0 or empty to disable, got {self.outlier_bound}")

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f, v in ((f, getattr(self, f.name)) for f in fields(self))}

    def hash(self) -> str:
        """SHA-256 of the settings that determine outputs; paths and logging are excluded."""
        body = {k: v for k, v in self.to_dict().items()
                if k not in ('input', 'out', 'checkpoint', 'log_file', 'log_level')}
        return config_hash(body)

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes)

    # Domain objects

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta_z, self.beta_y)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.seed, self.mc_samples)

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(self.finetune_epochs, self.batch_size, self.learning_rate, self.seed, self.mc_samples)

    def base_spec(self) -> BaseSignalSpec:
        return BaseSignalSpec(self.base, self.base_offset, self.base_max, self.base_period,
                              self.base_rate, self.length, self.reference_path or None)

    def noise_config(self) -> NoiseConfig:
        return noise_preset(self.noise)

    def pca_config(self) -> PcaConfig:
        if self.pca_components is not None:
            return PcaConfig.components(self.pca_components)
        return PcaConfig(variance_fraction=self.pca_variance)

    def ablation_spec(self) -> AblationSpec:
        return AblationSpec(self.ablation, tuple(self.ablation_values), self.joint_scales)

    def weight_scales(self):
        """Per-weight scale lists when any is set, else the shared ablation values."""
        per_weight = {name: getattr(self, f"{name}_scales") for name in WEIGHT_NAMES}
        if any(per_weight.values()):
            return {name: values for name, values in per_weight.items() if values}
        return self.ablation_spec().resolved_values()

    def eps_grid(self) -> Tuple[float, ...]:
        if self.eps_max == 25.0 and self.eps_step == 0.25:
            return tuple(DEFAULT_EPS_GRID)
        steps = int(round(self.eps_max / self.eps_step))
        return tuple(round(i * self.eps_step, 10) for i in range(steps + 1))

    def experiment_settings(self) -> ExperimentSettings:
        return ExperimentSettings(
            latent_dim=self.latent_dim,
            hidden_dim=self.hidden_dim,
            mc_samples=self.mc_samples,
            weights=self.loss_weights(),
            train=self.train_config(),
            finetune=self.finetune_config(),
            fusion=self.fusion,
            knn_k=self.knn_k,
            pca=self.pca_config(),
            kalman=KalmanConfig(q=self.kalman_q),
            eps_grid=self.eps_grid(),
            max_lag=self.max_lag,
            recovery_ratio=self.recovery_ratio,
            test_fraction=self.test_fraction or 0.2,
            baselines=self.baselines,
            outlier_bound=self.outlier_bound,
        )


FIELD_TYPES: Dict[str, Any] = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    """Convert a raw setting to the type of field ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(name, "unknown configuration key")
    target = FIELD_TYPES[name]
    optional = False
    if typing.get_origin(target) is typing.Union:
        args = [a for a in typing.get_args(target) if a is not type(None)]
        target, optional = args[0], True
    if value is None or (isinstance(value, str) and value.strip() == ""):
        if optional:
            return None
        if target is str:
            return ""
        if typing.get_origin(target) is tuple:
            return ()
        raise ConfigError(name, "value must not be empty")
    try:
        if typing.get_origin(target) is tuple:
            item = typing.get_args(target)[0]
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(item(str(v).strip()) if item is int else item(v) for v in items if str(v).strip())
        if target is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if target is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"cannot parse {value!r} as {getattr(target, '__name__', target)}")


def _normalise(raw: Mapping[str, Any], source: str) -> Dict[str, Any]:
    values = {}
    for key, value in raw.items():
        name = key.lower()
        if name not in FIELD_TYPES:
            raise ConfigError(key, f"unknown configuration key in {source}")
        values[name] = _coerce(name, value)
    return values


class Config:
    """
    Resolver of run settings.

    Args:
        environ (Mapping, optional): Environment to read ``VELI_*`` variables
            from; defaults to ``os.environ``.
    """

    def __init__(self, environ: Optional[Mapping[str, str]] = None):
        self.environ = os.environ if environ is None else environ

    def from_environment(self) -> Dict[str, Any]:
        raw = {key[len(ENV_PREFIX):]: value for key, value in self.environ.items() if key.startswith(ENV_PREFIX)}
        return _normalise(raw, "environment")

    @staticmethod
    def load_file(path: str) -> Dict[str, Any]:
        """Read a dotenv-style run configuration or a run manifest."""
        if not os.path.exists(path):
            raise ConfigError("config", f"file not found: {path}")
        if path.endswith(".json"):
            try:
                with open(path, encoding="utf-8") as handle:
                    body = json.load(handle)
            except json.JSONDecodeError as e:
                raise ConfigError("config", f"{path} is not valid JSON: {e}")
            raw = body.get("config", body)
        else:
            raw = dotenv_values(path)
        return _normalise(raw, path)

    def resolve(self, config_path: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
        values: Dict[str, Any] = {}
        values.update(self.from_environment())
        if config_path:
            values.update(self.load_file(config_path))
        values.update({k: _coerce(k, v) for k, v in (overrides or {}).items() if v is not None})
        return RunConfig(**values)
