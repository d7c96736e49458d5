"""
Point-estimate inference with one-standard-deviation credible intervals.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError
from app.model.veli import SensorSnapshot, SnapshotLike, VeliModel, as_batch
from app.transform.standardize import destandardize

logger = logging.getLogger(__name__)

FUSION_METHODS = ("median", "mean")


@dataclass
class CorrectedReading:
    """
    Corrected readings in physical units.

    ``y_hat`` and ``y_std`` have shape ``(d,)`` for a single snapshot and
    ``(n, d)`` for a batch; ``z_mean`` likewise over the latent dimension.
    """

    y_hat: np.ndarray
    y_std: np.ndarray
    z_mean: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return self.y_hat - self.y_std

    @property
    def upper(self) -> np.ndarray:
        return self.y_hat + self.y_std


def infer(model: VeliModel, snap: SnapshotLike, sample_latent: bool = False,
          rng: Optional[np.random.Generator] = None) -> CorrectedReading:
    """
    Correct one snapshot or a batch.

    By default ``z`` is fixed at the encoder mean and ``y_hat`` is the decoder
    mean (the per-hour consensus of the observed channels plus the learned
    residual), so the result is a pure function of parameters and input. With
    ``sample_latent`` the latent is drawn from q(z | x, psi) instead.

    Outputs are de-standardized with the model's stored statistics when present.
    """
    single = isinstance(snap, SensorSnapshot)
    batch = as_batch(snap)
    if batch.n_channels != model.n_sensors:
        raise DimensionError("snapshot channels", model.n_sensors, batch.n_channels)

    q_z = model.encoder(np.concatenate([batch.x, batch.mask], axis=1))
    if sample_latent:
        if rng is None:
            raise ConfigError("rng", "sampled inference needs a seeded generator")
        z = q_z.mean + q_z.std * rng.standard_normal(q_z.mean.shape)
    else:
        z = q_z.mean
    q_y, _ = model.decode(z, batch.x, batch.mask)

    y_hat, y_std = q_y.mean, q_y.std
    if model.standardizer is not None:
        y_hat = destandardize(model.standardizer, y_hat)
        y_std = model.standardizer.destandardize_std(y_std)

    if single:
        return CorrectedReading(y_hat[0], y_std[0], q_z.mean[0])
    return CorrectedReading(y_hat, y_std, q_z.mean)


def fuse(reading: CorrectedReading, method: str = "median"):
    """
    Collapse the per-channel corrections into one corrected series.

    Returns:
        tuple: ``(fused value(s), fused spread)``; the spread is the mean
        channel standard deviation.
    """
    if method not in FUSION_METHODS:
        raise ConfigError("fusion", f"must be one of {FUSION_METHODS}, got '{method}'")
    if reading.y_hat.size == 0:
        raise DataError("Nothing to fuse")
    reducer = np.median if method == "median" else np.mean
    return reducer(reading.y_hat, axis=-1), np.mean(reading.y_std, axis=-1)
