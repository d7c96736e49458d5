"""
The conditional variational correction model.

Two latent variables are inferred per hourly snapshot of d co-located sensors:
a low-dimensional fused reading ``z`` and the clean per-channel reading ``y``.
Five Gaussian heads parameterise the model:

    encoder   q(z | x, psi)      prior_z  p(z | psi)
    decoder   q(y | z, x, psi)   prior_y  p(y | z, psi)
    noise     (mu_sens, log var_sens)(z)

The training objective is the weighted negative ELBO

    beta_z * KL(q_z || p_z) + beta_y * KL(q_y || p_y) + alpha * NLL_recon

Both y-side means are residuals added to the per-hour consensus (median of the
observed standardized channels), so the heads learn corrections to the
co-located agreement rather than the level itself.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.exceptions import ConfigError, DataError, DimensionError
from app.model.distributions import (
    GaussianParams,
    kl_diag_gaussian,
    kl_diag_gaussian_grads,
    reconstruction_nll,
    reconstruction_nll_grads,
    reparam_sample,
)
from app.model.heads import GaussianHead, HeadNode
from app.nn.checkpoint import dumps_checkpoint, loads_checkpoint
from app.nn.dense import GradientTape
from app.transform.standardize import Standardizer

logger = logging.getLogger(__name__)

HEAD_NAMES = ("encoder", "prior_z", "decoder", "prior_y", "noise")
DEFAULT_OUTLIER_BOUND = 4.0


@dataclass
class SensorSnapshot:
    """
    One hourly vector of standardized readings and its observation mask.

    Readings where the mask is 0 are replaced by 0 on construction, so the raw
    value behind a missing entry never reaches the model.
    """

    x: np.ndarray
    mask: np.ndarray
    timestamp: Optional[pd.Timestamp] = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if x.shape != self.mask.shape or x.ndim != 1:
            raise DimensionError("snapshot mask", x.shape, self.mask.shape)
        self.x = np.where(self.mask > 0, np.nan_to_num(x), 0.0)


@dataclass
class SnapshotBatch:
    """A stack of snapshots: ``x`` and ``mask`` of shape ``(n, d)``."""

    x: np.ndarray
    mask: np.ndarray
    timestamps: Optional[pd.DatetimeIndex] = None

    def __post_init__(self):
        self.mask = np.atleast_2d(np.asarray(self.mask, dtype=np.float64))
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if x.shape != self.mask.shape:
            raise DimensionError("batch mask", x.shape, self.mask.shape)
        self.x = np.where(self.mask > 0, np.nan_to_num(x), 0.0)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def n_channels(self) -> int:
        return self.x.shape[1]

    def take(self, indices) -> 'SnapshotBatch':
        stamps = self.timestamps[indices] if self.timestamps is not None else None
        return SnapshotBatch(self.x[indices], self.mask[indices], stamps)

    @classmethod
    def stack(cls, snapshots: Sequence[SensorSnapshot]) -> 'SnapshotBatch':
        if not snapshots:
            raise DataError("Cannot stack an empty list of snapshots")
        stamps = None
        if all(s.timestamp is not None for s in snapshots):
            stamps = pd.DatetimeIndex([s.timestamp for s in snapshots])
        return cls(np.stack([s.x for s in snapshots]), np.stack([s.mask for s in snapshots]), stamps)


SnapshotLike = Union[SensorSnapshot, SnapshotBatch, Sequence[SensorSnapshot]]


def consensus(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-row median of the observed entries; 0 for a row with none observed."""
    x = np.atleast_2d(x)
    mask = np.atleast_2d(mask)
    anchor = np.zeros(x.shape[0])
    rows = (mask > 0).any(axis=1)
    if rows.any():
        anchor[rows] = np.nanmedian(np.where(mask[rows] > 0, x[rows], np.nan), axis=1)
    return anchor


def as_batch(data: SnapshotLike) -> SnapshotBatch:
    if isinstance(data, SnapshotBatch):
        return data
    if isinstance(data, SensorSnapshot):
        return SnapshotBatch(data.x[None, :], data.mask[None, :],
                             pd.DatetimeIndex([data.timestamp]) if data.timestamp is not None else None)
    return SnapshotBatch.stack(list(data))


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three loss terms (alpha: reconstruction, beta_z / beta_y: KL terms)."""

    alpha: float = 1.0
    beta_z: float = 10.0
    beta_y: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta_z", "beta_y"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(name, f"loss weight must be a positive finite number, got {value}")

    def scaled(self, alpha: float = 1.0, beta_z: float = 1.0, beta_y: float = 1.0) -> 'LossWeights':
        return LossWeights(self.alpha * alpha, self.beta_z * beta_z, self.beta_y * beta_y)


@dataclass
class LossBreakdown:
    kl_z: float
    kl_y: float
    recon_nll: float
    total: float

    @classmethod
    def combine(cls, kl_z: float, kl_y: float, recon_nll: float, weights: LossWeights) -> 'LossBreakdown':
        total = weights.beta_z * kl_z + weights.beta_y * kl_y + weights.alpha * recon_nll
        return cls(float(kl_z), float(kl_y), float(recon_nll), float(total))

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.kl_z, self.kl_y, self.recon_nll, self.total]).all())

    def to_dict(self) -> Dict[str, float]:
        return {"kl_z": self.kl_z, "kl_y": self.kl_y, "recon_nll": self.recon_nll, "total": self.total}


class VeliModel:
    """
    Parameter container for the five distribution heads plus loss settings.

    Args:
        n_sensors (int): Number of co-located channels d.
        latent_dim (int): Dimension r of the fused latent z (r <= d).
        hidden_dim (int): Width of the two hidden layers of every head.
        weights (LossWeights): Loss-term weights.
        mc_samples (int): Monte-Carlo (z, y) draws per snapshot during training.
        seed (int): Seed of the weight initialisation.
        outlier_bound (float, optional): Readings more than this many robust
            spreads from their channel centre are treated as unobserved; None
            disables screening.
    """

    def __init__(self, n_sensors: int, latent_dim: int = 4, hidden_dim: int = 32,
                 weights: LossWeights = LossWeights(), mc_samples: int = 1, seed: int = 0,
                 outlier_bound: Optional[float] = DEFAULT_OUTLIER_BOUND):
        if n_sensors < 1:
            raise ConfigError("n_sensors", f"need at least one sensor, got {n_sensors}")
        if not 1 <= latent_dim <= n_sensors:
            raise ConfigError("latent_dim", f"must satisfy 1 <= r <= d={n_sensors}, got {latent_dim}")
        if mc_samples < 1:
            raise ConfigError("mc_samples", f"must be >= 1, got {mc_samples}")
        if outlier_bound is not None and not outlier_bound > 0:
            raise ConfigError("outlier_bound", f"must be > 0 or unset, got {outlier_bound}")
        self.n_sensors = n_sensors
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.weights = weights
        self.mc_samples = mc_samples
        self.seed = seed
        self.outlier_bound = outlier_bound
        self.standardizer: Optional[Standardizer] = None

        d, r, h = n_sensors, latent_dim, hidden_dim
        rng = np.random.default_rng(seed)
        self.encoder = GaussianHead(2 * d, r, h, rng)
        self.prior_z = GaussianHead(d, r, h, rng)
        self.decoder = GaussianHead(r + 2 * d, d, h, rng)
        self.prior_y = GaussianHead(r + d, d, h, rng)
        self.noise = GaussianHead(r, d, h, rng)

    @property
    def heads(self) -> Dict[str, GaussianHead]:
        return {name: getattr(self, name) for name in HEAD_NAMES}

    def parameters(self, heads: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
        """Live parameter arrays keyed ``<head>.<net>.<layer>.<weight|bias>``."""
        selected = HEAD_NAMES if heads is None else tuple(heads)
        return {
            f"{head_name}.{name}": array
            for head_name in selected
            for name, array in self.heads[head_name].parameters().items()
        }

    def copy_parameters(self) -> Dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.parameters().items()}

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise DataError("Parameter set is incomplete", {"missing": sorted(missing)[:5]})
        for name, array in params.items():
            if values[name].shape != array.shape:
                raise DimensionError(f"parameter '{name}'", array.shape, values[name].shape)
            array[...] = values[name]

    def metadata(self) -> Dict[str, Any]:
        return {
            "n_sensors": self.n_sensors,
            "latent_dim": self.latent_dim,
            "hidden_dim": self.hidden_dim,
            "mc_samples": self.mc_samples,
            "alpha": self.weights.alpha,
            "beta_z": self.weights.beta_z,
            "beta_y": self.weights.beta_y,
            "seed": self.seed,
            "outlier_bound": self.outlier_bound,
            "standardizer": self.standardizer.to_dict() if self.standardizer is not None else None,
        }

    def to_checkpoint(self, extra_meta: Optional[Dict[str, Any]] = None) -> str:
        meta = self.metadata()
        meta.update(extra_meta or {})
        return dumps_checkpoint(self.parameters(), meta)

    def decode(self, z: np.ndarray, x: np.ndarray, mask: np.ndarray,
               tape: Optional[GradientTape] = None) -> Tuple[GaussianParams, Optional[HeadNode]]:
        """
        q(y | z, x, psi): the decoder head residual shifted by the per-hour consensus.

        Returns the distribution and, when ``tape`` is given, the recorded head node.
        """
        q_y, node = _apply(self.decoder, np.concatenate([z, x, mask], axis=1), tape)
        return _shift(q_y, consensus(x, mask)), node

    @classmethod
    def from_checkpoint(cls, text: str) -> 'VeliModel':
        params, meta = loads_checkpoint(text)
        model = cls(
            n_sensors=int(meta["n_sensors"]),
            latent_dim=int(meta["latent_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            weights=LossWeights(meta["alpha"], meta["beta_z"], meta["beta_y"]),
            mc_samples=int(meta["mc_samples"]),
            seed=int(meta["seed"]),
            outlier_bound=meta.get("outlier_bound", DEFAULT_OUTLIER_BOUND),
        )
        model.load_parameters(params)
        if meta.get("standardizer"):
            model.standardizer = Standardizer.from_dict(meta["standardizer"])
        return model


@dataclass
class ForwardResult:
    """Distributions and samples of one forward pass over a batch."""

    q_z: GaussianParams
    p_z: GaussianParams
    z_samples: List[np.ndarray] = field(default_factory=list)
    y_samples: List[np.ndarray] = field(default_factory=list)
    q_y: List[GaussianParams] = field(default_factory=list)
    p_y: List[GaussianParams] = field(default_factory=list)
    sens: List[GaussianParams] = field(default_factory=list)
    z_noise: List[np.ndarray] = field(default_factory=list)
    y_noise: List[np.ndarray] = field(default_factory=list)
    nodes: Dict[str, Any] = field(default_factory=dict)


def _shift(params: GaussianParams, anchor: np.ndarray) -> GaussianParams:
    return GaussianParams(params.mean + anchor[:, None], params.log_variance)


def _apply(head: GaussianHead, inputs: np.ndarray, tape: Optional[GradientTape]) -> Tuple[GaussianParams, Optional[HeadNode]]:
    if tape is None:
        return head(inputs), None
    return head.record(tape, inputs)


def forward(model: VeliModel, snap: SnapshotLike, rng: np.random.Generator,
            mc_samples: Optional[int] = None, tape: Optional[GradientTape] = None) -> ForwardResult:
    """
    Run every head on a snapshot (or batch) with reparameterised sampling.

    Args:
        model (VeliModel): The model.
        snap: A SensorSnapshot, SnapshotBatch or list of snapshots.
        rng (np.random.Generator): Source of the sampling noise.
        mc_samples (int, optional): Number K of (z, y) draws; defaults to ``model.mc_samples``.
        tape (GradientTape, optional): Records the pass for :func:`loss_and_grads`.

    Returns:
        ForwardResult: Batched distributions, one entry per draw for the y-side heads.
    """
    batch = as_batch(snap)
    if batch.n_channels != model.n_sensors:
        raise DimensionError("snapshot channels", model.n_sensors, batch.n_channels)
    k_draws = model.mc_samples if mc_samples is None else mc_samples
    if k_draws < 1:
        raise ConfigError("mc_samples", f"must be >= 1, got {k_draws}")

    x, mask = batch.x, batch.mask
    anchor = consensus(x, mask)
    q_z, enc_node = _apply(model.encoder, np.concatenate([x, mask], axis=1), tape)
    p_z, prior_z_node = _apply(model.prior_z, mask, tape)
    result = ForwardResult(q_z, p_z)
    result.nodes = {"encoder": enc_node, "prior_z": prior_z_node, "decoder": [], "prior_y": [], "noise": []}

    for _ in range(k_draws):
        z, u = reparam_sample(q_z, rng)
        q_y, dec_node = model.decode(z, x, mask, tape)
        p_y, prior_y_node = _apply(model.prior_y, np.concatenate([z, mask], axis=1), tape)
        p_y = _shift(p_y, anchor)
        sens, noise_node = _apply(model.noise, z, tape)
        y, v = reparam_sample(q_y, rng)
        result.z_samples.append(z)
        result.z_noise.append(u)
        result.q_y.append(q_y)
        result.p_y.append(p_y)
        result.sens.append(sens)
        result.y_samples.append(y)
        result.y_noise.append(v)
        result.nodes["decoder"].append(dec_node)
        result.nodes["prior_y"].append(prior_y_node)
        result.nodes["noise"].append(noise_node)
    return result


def loss(fwd: ForwardResult, snap: SnapshotLike, weights: LossWeights) -> LossBreakdown:
    """
    Weighted negative ELBO of a forward result, averaged over the batch.

    ``kl_y`` and ``recon_nll`` are additionally averaged over the K draws.
    """
    batch = as_batch(snap)
    kl_z = float(np.mean(kl_diag_gaussian(fwd.q_z, fwd.p_z)))
    kl_y = float(np.mean([np.mean(kl_diag_gaussian(q, p)) for q, p in zip(fwd.q_y, fwd.p_y)]))
    recon = float(np.mean([
        np.mean(reconstruction_nll(batch.x, batch.mask, y, sens))
        for y, sens in zip(fwd.y_samples, fwd.sens)
    ]))
    return LossBreakdown.combine(kl_z, kl_y, recon, weights)


def loss_and_grads(model: VeliModel, snap: SnapshotLike, rng: np.random.Generator,
                   weights: Optional[LossWeights] = None,
                   mc_samples: Optional[int] = None) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """
    Loss of a batch and its gradient with respect to every model parameter.

    The sampling noise is drawn once and held fixed for the backward pass, so
    the gradient is that of the realised loss.
    """
    weights = weights or model.weights
    batch = as_batch(snap)
    tape = GradientTape()
    fwd = forward(model, batch, rng, mc_samples, tape)
    breakdown = loss(fwd, batch, weights)

    n = len(batch)
    k_draws = len(fwd.z_samples)
    r = model.latent_dim

    g_qz_mean, g_qz_logvar, g_pz_mean, g_pz_logvar = (
        g * (weights.beta_z / n) for g in kl_diag_gaussian_grads(fwd.q_z, fwd.p_z)
    )
    y_scale_kl = weights.beta_y / (n * k_draws)
    y_scale_recon = weights.alpha / (n * k_draws)

    for k in range(k_draws):
        q_y, p_y, sens = fwd.q_y[k], fwd.p_y[k], fwd.sens[k]
        g_qy_mean, g_qy_logvar, g_py_mean, g_py_logvar = (
            g * y_scale_kl for g in kl_diag_gaussian_grads(q_y, p_y)
        )
        g_y, g_sens_mean, g_sens_logvar = (
            g * y_scale_recon for g in reconstruction_nll_grads(batch.x, batch.mask, fwd.y_samples[k], sens)
        )
        # y = mean + exp(log_var / 2) * v
        g_qy_mean = g_qy_mean + g_y
        g_qy_logvar = g_qy_logvar + g_y * 0.5 * q_y.std * fwd.y_noise[k]

        g_z = model.decoder.pullback(tape, fwd.nodes["decoder"][k], g_qy_mean, g_qy_logvar)[:, :r]
        g_z = g_z + model.prior_y.pullback(tape, fwd.nodes["prior_y"][k], g_py_mean, g_py_logvar)[:, :r]
        g_z = g_z + model.noise.pullback(tape, fwd.nodes["noise"][k], g_sens_mean, g_sens_logvar)

        # z = mean + exp(log_var / 2) * u
        g_qz_mean = g_qz_mean + g_z
        g_qz_logvar = g_qz_logvar + g_z * 0.5 * fwd.q_z.std * fwd.z_noise[k]

    model.encoder.pullback(tape, fwd.nodes["encoder"], g_qz_mean, g_qz_logvar)
    model.prior_z.pullback(tape, fwd.nodes["prior_z"], g_pz_mean, g_pz_logvar)

    grads = {
        f"{head_name}.{name}": g
        for head_name, head in model.heads.items()
        for name, g in head.gradients(tape).items()
    }
    return breakdown, grads
