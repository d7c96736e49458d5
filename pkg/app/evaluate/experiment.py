"""
Experiment drivers: train on a location, correct it, and score the result.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from app.baselines.kalman import KalmanConfig, kalman_denoise
from app.baselines.knn import knn_impute
from app.baselines.pca import PcaConfig, pca_denoise
from app.exceptions import DataError
from app.extract.series import LocationDataset
from app.evaluate.metrics import DEFAULT_EPS_GRID, DEFAULT_MAX_LAG, autocorrelation, hit_rate_curve, mae
from app.evaluate.report import EvalReport
from app.model.inference import CorrectedReading, fuse, infer
from app.model.trainer import TrainConfig, TrainingResult, fine_tune, train
from app.model.veli import DEFAULT_OUTLIER_BOUND, LossWeights, SnapshotBatch, VeliModel
from app.transform.standardize import Standardizer, standardize_apply, standardize_fit
from app.transform.transformer import partition_location

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentSettings:
    """Everything an experiment needs besides its data and seed."""

    latent_dim: int = 4
    hidden_dim: int = 32
    mc_samples: int = 1
    weights: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    finetune: TrainConfig = TrainConfig(epochs=30)
    fusion: str = "median"
    knn_k: int = 5
    pca: PcaConfig = PcaConfig()
    kalman: KalmanConfig = KalmanConfig()
    eps_grid: Tuple[float, ...] = tuple(DEFAULT_EPS_GRID)
    max_lag: int = DEFAULT_MAX_LAG
    recovery_ratio: float = 0.9
    test_fraction: float = 0.2
    baselines: bool = True
    outlier_bound: Optional[float] = DEFAULT_OUTLIER_BOUND


@dataclass
class CorrectedLocation:
    """A location together with its per-channel and fused corrections."""

    location: LocationDataset
    reading: CorrectedReading
    fused: np.ndarray
    fused_std: np.ndarray

    def fused_series(self) -> pd.Series:
        return pd.Series(self.fused, index=self.location.readings.index, name='yhat')


def snapshots(location: LocationDataset, standardizer: Standardizer,
              outlier_bound: Optional[float] = None) -> SnapshotBatch:
    """Standardized model input; screened extreme readings enter as unobserved."""
    x, mask = standardize_apply(standardizer, location.values, outlier_bound)
    return SnapshotBatch(x, mask, location.readings.index)


def build_model(n_sensors: int, settings: ExperimentSettings, seed: int) -> VeliModel:
    return VeliModel(
        n_sensors,
        latent_dim=min(settings.latent_dim, n_sensors),
        hidden_dim=settings.hidden_dim,
        weights=settings.weights,
        mc_samples=settings.mc_samples,
        seed=seed,
        outlier_bound=settings.outlier_bound,
    )


def train_on_location(location: LocationDataset, settings: ExperimentSettings = ExperimentSettings(),
                      seed: int = 0, min_observed: int = 1) -> TrainingResult:
    """
    Fit a fresh model to one location.

    The standardizer is fitted on the training hours and stored on the model,
    together with the outlier bound used to screen its input.
    Hours with fewer than ``min_observed`` observed channels are skipped.
    """
    keep = location.readings.notna().sum(axis=1).to_numpy() >= max(min_observed, 1)
    if not keep.any():
        raise DataError(f"Location '{location.location_id}' has no hour with {min_observed} observed channels")
    train_part = location.rows(keep)
    logger.info(f"Training on '{location.location_id}': {int(keep.sum())} of {len(location)} hours, "
                f"{location.n_sensors} sensors, seed {seed}")
    model = build_model(location.n_sensors, settings, seed)
    model.standardizer = standardize_fit(train_part.values)
    batch = snapshots(train_part, model.standardizer, model.outlier_bound)
    return train(model, batch, replace(settings.train, seed=seed))


def fine_tune_on_location(model: VeliModel, location: LocationDataset,
                          settings: ExperimentSettings = ExperimentSettings(), seed: int = 0) -> TrainingResult:
    """Encoder-only adaptation; the model keeps its original standardizer."""
    if model.standardizer is None:
        raise DataError("Model has no stored standardizer")
    keep = location.readings.notna().any(axis=1).to_numpy()
    part = location.rows(keep)
    batch = snapshots(part, model.standardizer, model.outlier_bound)
    return fine_tune(model, batch, replace(settings.finetune, seed=seed))


def correct_location(model: VeliModel, location: LocationDataset, fusion: str = "median",
                     sample_latent: bool = False, rng: Optional[np.random.Generator] = None) -> CorrectedLocation:
    if model.standardizer is None:
        raise DataError("Model has no stored standardizer")
    batch = snapshots(location, model.standardizer, model.outlier_bound)
    reading = infer(model, batch, sample_latent=sample_latent, rng=rng)
    fused, fused_std = fuse(reading, fusion)
    return CorrectedLocation(location, reading, fused, fused_std)


def raw_mean(location: LocationDataset) -> np.ndarray:
    """Per-hour mean of the observed raw channels; NaN where none is observed."""
    return location.readings.mean(axis=1, skipna=True).to_numpy(dtype=np.float64)


def baseline_series(location: LocationDataset, settings: ExperimentSettings) -> Dict[str, np.ndarray]:
    """
    Fused PCA and Kalman estimates on KNN-imputed readings.

    Hours without any observed channel stay NaN. A baseline whose preconditions
    fail is left out with a warning.
    """
    values = location.values
    rows = ~np.isnan(values).all(axis=1)
    out: Dict[str, np.ndarray] = {}
    try:
        imputed = knn_impute(values[rows], settings.knn_k)
    except DataError as e:
        logger.warning(f"Skipping baselines for '{location.location_id}': {e}")
        return out
    for name in ('pca', 'kf'):
        series = np.full(len(location), np.nan)
        try:
            if name == 'pca':
                series[rows] = pca_denoise(imputed, settings.pca)[1]
            else:
                series[rows] = kalman_denoise(imputed, settings.kalman)
        except DataError as e:
            logger.warning(f"Skipping {name} baseline for '{location.location_id}': {e}")
            continue
        out[name] = series
    return out


def _safe_autocorr(series, max_lag: int) -> np.ndarray:
    try:
        return autocorrelation(series, max_lag)
    except DataError as e:
        logger.warning(f"Autocorrelation unavailable: {e}")
        return np.full(max_lag, np.nan)


def score(corrected: CorrectedLocation, settings: ExperimentSettings = ExperimentSettings(),
          experiment: str = "eval", seed_stats: Optional[Tuple[float, float]] = None,
          extra: Optional[Dict] = None) -> EvalReport:
    """Compare a corrected location, its raw mean and the baselines to the reference."""
    location = corrected.location
    if location.reference is None:
        raise DataError(f"Location '{location.location_id}' has no reference series to evaluate against")
    ref = location.reference.to_numpy(dtype=np.float64)
    raw = raw_mean(location)

    mae_raw = mae(raw, ref)
    mae_method = mae(corrected.fused, ref)
    baselines = baseline_series(location, settings) if settings.baselines else {}
    recovered = mae_method <= settings.recovery_ratio * mae_raw
    if not recovered:
        logger.warning(f"'{location.location_id}' not recovered: corrected MAE {mae_method:.3f} > "
                       f"{settings.recovery_ratio} x raw MAE {mae_raw:.3f}")

    report = EvalReport(
        location_id=location.location_id,
        mae_raw_mean=mae_raw,
        mae_method=mae_method,
        hit_rate=hit_rate_curve(corrected.fused, ref, settings.eps_grid),
        autocorr=_safe_autocorr(corrected.fused, settings.max_lag),
        seed_stats=seed_stats,
        mae_pca=mae(baselines['pca'], ref) if 'pca' in baselines else None,
        mae_kf=mae(baselines['kf'], ref) if 'kf' in baselines else None,
        recovered=bool(recovered),
        experiment=experiment,
        n_hours=len(location),
        n_sensors=location.n_sensors,
        hit_rate_raw=hit_rate_curve(raw, ref, settings.eps_grid),
        autocorr_raw=_safe_autocorr(raw, settings.max_lag),
        autocorr_ref=_safe_autocorr(ref, settings.max_lag),
        extra=dict(extra or {}),
    )
    logger.info(f"[{experiment}] '{location.location_id}': raw MAE {mae_raw:.3f}, corrected MAE {mae_method:.3f}")
    return report


def evaluate_location(model: VeliModel, location: LocationDataset,
                      settings: ExperimentSettings = ExperimentSettings(), experiment: str = "eval",
                      seed_stats: Optional[Tuple[float, float]] = None, extra: Optional[Dict] = None) -> EvalReport:
    corrected = correct_location(model, location, settings.fusion)
    return score(corrected, settings, experiment, seed_stats, extra)


def copy_model(model: VeliModel) -> VeliModel:
    return VeliModel.from_checkpoint(model.to_checkpoint())


def run_finetune_comparison(model: VeliModel, target: LocationDataset,
                            settings: ExperimentSettings = ExperimentSettings(),
                            seed: int = 0) -> Dict[str, object]:
    """
    Zero-shot versus fine-tuned accuracy on a new location.

    The target is split chronologically; the encoder is adapted on the first
    part and both models are scored on the held-out part.

    Returns:
        dict: ``zero_shot`` and ``fine_tuned`` reports, the fine-tuned ``model``
        and its loss ``history``.
    """
    adapt_part, test_part = partition_location(target, settings.test_fraction)
    zero_shot = evaluate_location(model, test_part, settings, experiment="zero_shot")
    tuned = copy_model(model)
    result = fine_tune_on_location(tuned, adapt_part, settings, seed)
    fine_tuned = evaluate_location(tuned, test_part, settings, experiment="fine_tuned")
    logger.info(f"Fine-tuning on '{target.location_id}': MAE {zero_shot.mae_method:.3f} -> {fine_tuned.mae_method:.3f}")
    return {"zero_shot": zero_shot, "fine_tuned": fine_tuned, "model": tuned, "history": result.history}


def train_and_evaluate(location: LocationDataset, settings: ExperimentSettings = ExperimentSettings(),
                       seed: int = 0, min_observed: int = 1, experiment: str = "eval",
                       extra: Optional[Dict] = None) -> EvalReport:
    result = train_on_location(location, settings, seed, min_observed)
    return evaluate_location(result.model, location, settings, experiment, extra=extra)
