"""
Kalman-filter fusion of co-located sensors.

The true concentration is a scalar random walk ``x_t = x_{t-1} + w`` with
``w ~ N(0, q)``; every sensor observes it as ``z_i = x_t + v_i`` with
``v_i ~ N(0, r_i)``. The filter returns the posterior mean at every hour.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from filterpy.kalman import KalmanFilter

from app.exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
PROCESS_FRACTION = 0.01


@dataclass(frozen=True)
class KalmanConfig:
    """
    Filter noise settings; ``None`` fields are estimated from the data.

    Defaults: ``q`` is 1% of the overall variance, ``r_meas`` the per-channel
    sample variance, the initial state the mean of the first hour and its
    variance the mean measurement variance.
    """

    q: Optional[float] = None
    r_meas: Optional[Sequence[float]] = None
    initial_mean: Optional[float] = None
    initial_variance: Optional[float] = None

    def __post_init__(self):
        if self.q is not None and not self.q > 0:
            raise ConfigError("kalman_q", f"must be > 0, got {self.q}")
        if self.r_meas is not None and not np.all(np.asarray(self.r_meas, dtype=np.float64) > 0):
            raise ConfigError("kalman_r", "measurement variances must be > 0")
        if self.initial_variance is not None and not self.initial_variance > 0:
            raise ConfigError("kalman_p0", f"must be > 0, got {self.initial_variance}")


def _resolve(matrix: np.ndarray, cfg: KalmanConfig):
    d = matrix.shape[1]
    q = cfg.q if cfg.q is not None else max(PROCESS_FRACTION * float(np.var(matrix)), VARIANCE_FLOOR)
    if cfg.r_meas is not None:
        r = np.broadcast_to(np.asarray(cfg.r_meas, dtype=np.float64), (d,)).copy()
    elif matrix.shape[0] > 1:
        r = np.maximum(np.var(matrix, axis=0, ddof=1), VARIANCE_FLOOR)
    else:
        r = np.ones(d)
    x0 = cfg.initial_mean if cfg.initial_mean is not None else float(np.mean(matrix[0]))
    p0 = cfg.initial_variance if cfg.initial_variance is not None else float(np.mean(r))
    return q, r, x0, p0


def kalman_denoise(matrix, cfg: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """
    Fuse an imputed ``(T, d)`` matrix into one filtered series of length ``T``.

    Raises:
        DataError: If the matrix holds NaN or infinite values.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise DataError(f"Expected a non-empty (T, d) matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise DataError("Kalman input must be finite; impute missing readings first")

    t, d = matrix.shape
    q, r, x0, p0 = _resolve(matrix, cfg)
    kf = KalmanFilter(dim_x=1, dim_z=d)
    kf.x = np.array([[x0]])
    kf.P = np.array([[p0]])
    kf.F = np.array([[1.0]])
    kf.H = np.ones((d, 1))
    kf.Q = np.array([[q]])
    kf.R = np.diag(r)

    logger.debug(f"Kalman fusion of {t} hours x {d} channels, q={q:.4g}")
    fused = np.empty(t, dtype=np.float64)
    for i in range(t):
        kf.predict()
        kf.update(matrix[i])
        fused[i] = kf.x[0, 0]
    return fused
