"""
Diagonal Gaussian helpers: KL divergence, reparameterised sampling and the
heteroscedastic reconstruction term, each with its closed-form gradient.

All functions accept a single vector (shape ``(k,)``) or a batch
(shape ``(n, k)``) and reduce over the last axis.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.exceptions import DimensionError

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianParams:
    """Diagonal Gaussian given by its mean and (clamped) log-variance."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_variance = np.clip(np.asarray(self.log_variance, dtype=np.float64), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mean.shape != self.log_variance.shape:
            raise DimensionError("Gaussian log-variance", self.mean.shape, self.log_variance.shape)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_variance)


def _check_same(q: GaussianParams, p: GaussianParams):
    if q.mean.shape != p.mean.shape:
        raise DimensionError("KL operands", q.mean.shape, p.mean.shape)


def kl_diag_gaussian(q: GaussianParams, p: GaussianParams):
    """
    KL(q || p) for diagonal Gaussians, summed over the last axis.

    Returns a float for vectors and an array of shape ``(n,)`` for batches.
    """
    _check_same(q, p)
    diff = q.mean - p.mean
    terms = p.log_variance - q.log_variance + (q.variance + diff * diff) * np.exp(-p.log_variance) - 1.0
    kl = 0.5 * terms.sum(axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def kl_diag_gaussian_grads(q: GaussianParams, p: GaussianParams) -> Tuple[np.ndarray, ...]:
    """Element-wise partials of :func:`kl_diag_gaussian` w.r.t. (q.mean, q.log_var, p.mean, p.log_var)."""
    _check_same(q, p)
    diff = q.mean - p.mean
    inv_vp = np.exp(-p.log_variance)
    d_mean_q = diff * inv_vp
    d_logvar_q = 0.5 * (q.variance * inv_vp - 1.0)
    d_logvar_p = 0.5 * (1.0 - (q.variance + diff * diff) * inv_vp)
    return d_mean_q, d_logvar_q, -d_mean_q, d_logvar_p


def reparam_sample(params: GaussianParams, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw ``mean + exp(log_variance / 2) * u`` with ``u ~ N(0, I)``.

    Returns:
        tuple: ``(sample, u)``; ``u`` is needed to pull gradients back to the log-variance.
    """
    u = rng.standard_normal(params.mean.shape)
    return params.mean + params.std * u, u


def reconstruction_nll(x, mask, y_hat, sens: GaussianParams):
    """
    Masked heteroscedastic Gaussian reconstruction term.

    ``sum_i mask_i * [log(2 pi var_i) + (x_i - y_hat_i - mu_i)^2 / var_i]``
    with ``(mu, var)`` the sensor-noise Gaussian. Masked channels contribute 0.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if not (x.shape == mask.shape == y_hat.shape == sens.mean.shape):
        raise DimensionError("reconstruction operands", x.shape, (mask.shape, y_hat.shape, sens.mean.shape))
    resid = x - y_hat - sens.mean
    terms = mask * (LOG_2PI + sens.log_variance + resid * resid * np.exp(-sens.log_variance))
    nll = terms.sum(axis=-1)
    return float(nll) if np.ndim(nll) == 0 else nll


def reconstruction_nll_grads(x, mask, y_hat, sens: GaussianParams) -> Tuple[np.ndarray, ...]:
    """Element-wise partials of :func:`reconstruction_nll` w.r.t. (y_hat, sens.mean, sens.log_var)."""
    mask = np.asarray(mask, dtype=np.float64)
    resid = np.asarray(x, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64) - sens.mean
    inv_var = np.exp(-sens.log_variance)
    d_resid = 2.0 * mask * resid * inv_var
    d_logvar = mask * (1.0 - resid * resid * inv_var)
    return -d_resid, -d_resid, d_logvar
