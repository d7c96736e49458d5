"""
Ablation drivers: injected sensor failures, sensor-count subsets, loss-weight
sweeps and seed repetition.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.exceptions import ConfigError, DataError
from app.extract.series import LocationDataset
from app.evaluate.experiment import ExperimentSettings, evaluate_location, train_and_evaluate
from app.evaluate.metrics import seed_statistics
from app.evaluate.report import EvalReport
from app.model.veli import VeliModel

logger = logging.getLogger(__name__)

ABLATION_KINDS = ('na_injection', 'sensor_subset', 'loss_weight_sweep', 'seed_repeat')
DEFAULT_NA_COUNTS = (1, 3, 5, 7, 9)
DEFAULT_SUBSET_SIZES = (3, 5, 7, 10)
DEFAULT_WEIGHT_SCALES = (0.5, 1.0, 2.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
WEIGHT_NAMES = ('alpha', 'beta_z', 'beta_y')


@dataclass(frozen=True)
class AblationSpec:
    """
    One ablation study.

    ``values`` are NA counts per hour for ``na_injection``, subset sizes for
    ``sensor_subset``, weight scales for ``loss_weight_sweep`` and seeds for
    ``seed_repeat``. ``joint`` scales all three loss weights together.
    """

    kind: str
    values: Tuple[float, ...] = ()
    joint: bool = False

    def __post_init__(self):
        if self.kind not in ABLATION_KINDS:
            raise ConfigError("ablation", f"must be one of {ABLATION_KINDS}, got '{self.kind}'")
        if self.kind == 'sensor_subset' and any(int(v) < 1 for v in self.values):
            raise ConfigError("ablation_values", f"subset sizes must be >= 1, got {self.values}")
        if self.kind == 'na_injection' and any(int(v) < 0 for v in self.values):
            raise ConfigError("ablation_values", f"NA counts must be >= 0, got {self.values}")

    def resolved_values(self) -> Tuple[float, ...]:
        if self.values:
            return tuple(self.values)
        return {
            'na_injection': DEFAULT_NA_COUNTS,
            'sensor_subset': DEFAULT_SUBSET_SIZES,
            'loss_weight_sweep': DEFAULT_WEIGHT_SCALES,
            'seed_repeat': DEFAULT_SEEDS,
        }[self.kind]


def inject_na(location: LocationDataset, n: int, rng: np.random.Generator) -> LocationDataset:
    """Force exactly ``n`` uniformly chosen channels of every hour to NA."""
    d = location.n_sensors
    if not 0 <= n < d:
        raise ConfigError("n", f"NA count must satisfy 0 <= n < d={d}, got {n}")
    values = location.values.copy()
    if n == 0:
        return location.with_readings(values)
    chosen = np.argsort(rng.random(values.shape), axis=1)[:, :n]
    np.put_along_axis(values, chosen, np.nan, axis=1)
    return location.with_readings(values)


def run_na_injection(location: LocationDataset, model: VeliModel, n: int, seed: int = 0,
                     settings: ExperimentSettings = ExperimentSettings()) -> EvalReport:
    """Evaluate a trained model after knocking out ``n`` channels per hour."""
    injected = inject_na(location, int(n), np.random.default_rng(seed))
    logger.info(f"NA injection: n={n} of {location.n_sensors} channels per hour")
    return evaluate_location(model, injected, settings, experiment="na_injection", extra={"n": int(n)})


def run_sensor_subset(location: LocationDataset, sizes: Sequence[int] = DEFAULT_SUBSET_SIZES,
                      settings: ExperimentSettings = ExperimentSettings(), seed: int = 0) -> Dict[int, EvalReport]:
    """
    Retrain and evaluate on the first ``s`` sensors for every size ``s``.

    Training hours need at least half of the ``s`` sensors observed (rounded down).
    """
    sizes = [int(s) for s in sizes]
    if max(sizes) > location.n_sensors:
        raise DataError(f"Location '{location.location_id}' has {location.n_sensors} sensors, "
                        f"subset size {max(sizes)} requested")
    reports = {}
    for s in sizes:
        subset = location.select(location.sensor_ids[:s])
        logger.info(f"Sensor subset: s={s}")
        reports[s] = train_and_evaluate(subset, settings, seed, min_observed=s // 2,
                                        experiment="sensor_subset", extra={"size": s})
    return reports


WeightScales = Union[Sequence[float], Mapping[str, Sequence[float]]]


def _check_scales(field: str, scales: Sequence[float]) -> None:
    for scale in scales:
        if not scale > 0:
            raise ConfigError(field, f"loss-weight scales must be > 0, got {scale}; a zero weight drops its term")


def weight_grid(scales: WeightScales = DEFAULT_WEIGHT_SCALES, joint: bool = False) -> List[Tuple[float, float, float]]:
    """
    Scale triples ``(alpha, beta_z, beta_y)`` relative to the defaults.

    ``scales`` is either one list shared by the three weights or a mapping from
    weight name to its own list; weights missing from the mapping stay at 1.
    Without ``joint`` each weight is scaled on its own; with it all three move
    together, which needs a shared list.

    Raises:
        ConfigError: On a non-positive scale, naming its setting
            (``<weight>_scales``, or ``ablation_values`` for a shared list).
    """
    if isinstance(scales, Mapping):
        unknown = sorted(set(scales) - set(WEIGHT_NAMES))
        if unknown:
            raise ConfigError("weight_scales", f"unknown loss weights {unknown}, expected {WEIGHT_NAMES}")
        if joint:
            raise ConfigError("joint_scales", "joint scaling needs one shared scale list")
        per_weight = {name: tuple(scales[name]) for name in WEIGHT_NAMES if name in scales}
        for name, values in per_weight.items():
            _check_scales(f"{name}_scales", values)
    else:
        _check_scales("ablation_values", scales)
        if joint:
            return [(float(s), float(s), float(s)) for s in scales]
        per_weight = {name: tuple(scales) for name in WEIGHT_NAMES}

    grid = []
    for i, name in enumerate(WEIGHT_NAMES):
        for s in per_weight.get(name, ()):
            triple = [1.0, 1.0, 1.0]
            triple[i] = float(s)
            grid.append(tuple(triple))
    return grid


def run_loss_weight_sweep(location: LocationDataset, scales: WeightScales = DEFAULT_WEIGHT_SCALES,
                          settings: ExperimentSettings = ExperimentSettings(), seed: int = 0,
                          joint: bool = False) -> pd.DataFrame:
    """
    Retrain at every grid point of ``weight_grid`` and tabulate the corrected MAE.

    Returns:
        pd.DataFrame: One row per setting with the scales, absolute weights and MAEs.
    """
    grid = weight_grid(scales, joint)
    rows = []
    for alpha_s, beta_z_s, beta_y_s in grid:
        weights = settings.weights.scaled(alpha_s, beta_z_s, beta_y_s)
        logger.info(f"Loss-weight sweep: alpha={weights.alpha:g} beta_z={weights.beta_z:g} beta_y={weights.beta_y:g}")
        report = train_and_evaluate(location, replace(settings, weights=weights), seed, experiment="loss_weight_sweep")
        rows.append({
            'alpha_scale': alpha_s, 'beta_z_scale': beta_z_s, 'beta_y_scale': beta_y_s,
            'alpha': weights.alpha, 'beta_z': weights.beta_z, 'beta_y': weights.beta_y,
            'mae_raw_mean': report.mae_raw_mean, 'mae_method': report.mae_method,
        })
    return pd.DataFrame(rows)


def seed_repeat(experiment: Callable[[int], float], seeds: Sequence[int] = DEFAULT_SEEDS) -> Tuple[float, float]:
    """Run ``experiment(seed)`` for every seed; return the MAE mean and sample std."""
    values = []
    for seed in seeds:
        values.append(float(experiment(int(seed))))
        logger.info(f"Seed {seed}: {values[-1]:.4f}")
    return seed_statistics(values)


def run_seed_repeat(location: LocationDataset, seeds: Sequence[int] = DEFAULT_SEEDS,
                    settings: ExperimentSettings = ExperimentSettings()) -> EvalReport:
    """Train and evaluate once per seed; the last report carries the mean and std."""
    reports: Dict[int, EvalReport] = {}

    def experiment(seed: int) -> float:
        reports[seed] = train_and_evaluate(location, settings, seed, experiment="seed_repeat")
        return reports[seed].mae_method

    stats = seed_repeat(experiment, seeds)
    last = reports[int(seeds[-1])]
    last.seed_stats = stats
    last.extra["seeds"] = ",".join(str(int(s)) for s in seeds)
    return last
