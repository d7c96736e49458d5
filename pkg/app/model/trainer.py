"""
Mini-batch Adam training and encoder-only fine-tuning.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from app.exceptions import ConfigError, DataError, NumericalError, TrainingAborted
from app.model.veli import (
    HEAD_NAMES,
    LossBreakdown,
    SnapshotLike,
    VeliModel,
    as_batch,
    loss_and_grads,
)
from app.nn.optim import Adam

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings; defaults follow the published training recipe."""

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-6
    seed: int = 0
    mc_samples: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")


@dataclass
class TrainingResult:
    model: VeliModel
    history: List[LossBreakdown] = field(default_factory=list)


def _epoch_mean(parts: List[LossBreakdown], sizes: List[int]) -> LossBreakdown:
    w = np.asarray(sizes, dtype=np.float64) / float(sum(sizes))
    return LossBreakdown(
        kl_z=float(np.dot(w, [p.kl_z for p in parts])),
        kl_y=float(np.dot(w, [p.kl_y for p in parts])),
        recon_nll=float(np.dot(w, [p.recon_nll for p in parts])),
        total=float(np.dot(w, [p.total for p in parts])),
    )


def train(model: VeliModel, dataset: SnapshotLike, config: TrainConfig = TrainConfig(),
          trainable: Optional[Iterable[str]] = None) -> TrainingResult:
    """
    Minimise the mean batch loss with Adam.

    Args:
        model (VeliModel): Model updated in place.
        dataset: Training snapshots; every snapshot needs at least one observed channel.
        config (TrainConfig): Epochs, batch size, learning rate and seed.
        trainable (Iterable[str], optional): Head names to update; all heads by default.

    Returns:
        TrainingResult: The model and one batch-size weighted LossBreakdown per epoch.

    Raises:
        TrainingAborted: On a non-finite loss or gradient. The model keeps the
            parameters of the last finite step.
    """
    batch = as_batch(dataset)
    if len(batch) == 0:
        raise DataError("Training dataset is empty")
    empty_rows = np.flatnonzero(batch.mask.sum(axis=1) < 1)
    if empty_rows.size:
        raise DataError("Training snapshots need at least one observed channel",
                        {"rows": empty_rows[:10].tolist(), "count": int(empty_rows.size)})

    heads = tuple(HEAD_NAMES if trainable is None else trainable)
    unknown = set(heads) - set(HEAD_NAMES)
    if unknown:
        raise ConfigError("trainable", f"unknown heads {sorted(unknown)}")

    params = model.parameters(heads)
    optimizer = Adam(config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history: List[LossBreakdown] = []
    n = len(batch)
    n_batches = (n + config.batch_size - 1) // config.batch_size

    logger.info(f"Training heads {', '.join(heads)} on {n} snapshots for {config.epochs} epochs "
                f"(batch {config.batch_size}, lr {config.learning_rate:g})")

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        parts, sizes = [], []
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            breakdown, grads = loss_and_grads(model, batch.take(idx), rng, mc_samples=config.mc_samples)
            if not breakdown.is_finite():
                logger.error(f"Non-finite loss at epoch {epoch + 1}, batch {b + 1}: {breakdown.to_dict()}")
                raise TrainingAborted(epoch + 1, b + 1, history, model)
            try:
                optimizer.step(params, {name: grads[name] for name in params})
            except NumericalError:
                logger.error(f"Non-finite gradient at epoch {epoch + 1}, batch {b + 1}", exc_info=True)
                raise TrainingAborted(epoch + 1, b + 1, history, model)
            parts.append(breakdown)
            sizes.append(len(idx))
            logger.debug(f"epoch {epoch + 1} batch {b + 1}/{n_batches}: total={breakdown.total:.4f}")

        summary = _epoch_mean(parts, sizes)
        history.append(summary)
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: total={summary.total:.4f} "
                    f"kl_z={summary.kl_z:.4f} kl_y={summary.kl_y:.4f} recon={summary.recon_nll:.4f}")

    return TrainingResult(model, history)


def fine_tune(model: VeliModel, dataset: SnapshotLike, config: TrainConfig = TrainConfig(epochs=30)) -> TrainingResult:
    """
    Adapt a trained model to a new distribution by updating the encoder only.

    Decoder, both priors and the noise head stay bit-for-bit unchanged.
    """
    logger.info("Fine-tuning encoder with all other heads frozen")
    return train(model, dataset, config, trainable=("encoder",))
