"""
PCA denoising: keep the leading principal components and reconstruct.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.decomposition import PCA

from app.exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcaConfig:
    """Retain either ``n_components`` components or enough to explain ``variance_fraction``."""

    n_components: Optional[int] = None
    variance_fraction: Optional[float] = 0.9

    def __post_init__(self):
        if (self.n_components is None) == (self.variance_fraction is None):
            raise ConfigError("pca", "set exactly one of n_components and variance_fraction")
        if self.n_components is not None and self.n_components < 1:
            raise ConfigError("pca_components", f"must be >= 1, got {self.n_components}")
        if self.variance_fraction is not None and not 0.0 < self.variance_fraction <= 1.0:
            raise ConfigError("pca_variance", f"must lie in (0, 1], got {self.variance_fraction}")

    @classmethod
    def components(cls, k: int) -> 'PcaConfig':
        return cls(n_components=k, variance_fraction=None)


def pca_denoise(matrix, cfg: PcaConfig = PcaConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project the column-centred matrix on its top principal components.

    Returns:
        tuple: ``(reconstruction (T, d), fused row mean (T,))``.

    Raises:
        DataError: If the matrix is not finite or has no more rows than columns.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"Expected a (T, d) matrix, got shape {matrix.shape}")
    t, d = matrix.shape
    if t <= d:
        raise DataError(f"PCA denoising needs more hours than channels, got T={t}, d={d}")
    if not np.isfinite(matrix).all():
        raise DataError("PCA input must be finite; impute missing readings first")
    if cfg.n_components is not None and cfg.n_components > d:
        raise ConfigError("pca_components", f"{cfg.n_components} exceeds the channel count {d}")

    if np.allclose(matrix.var(axis=0), 0.0):
        reconstruction = np.broadcast_to(matrix.mean(axis=0), matrix.shape).copy()
        return reconstruction, reconstruction.mean(axis=1)

    if cfg.n_components is not None:
        n_components = cfg.n_components
    elif cfg.variance_fraction >= 1.0:
        n_components = d
    else:
        n_components = cfg.variance_fraction

    pca = PCA(n_components=n_components, svd_solver='full')
    scores = pca.fit_transform(matrix)
    reconstruction = pca.inverse_transform(scores)
    logger.debug(f"PCA kept {pca.n_components_} of {d} components "
                 f"({float(pca.explained_variance_ratio_.sum()):.3f} of the variance)")
    return reconstruction, reconstruction.mean(axis=1)
