"""
Synthetic location generator.

A clean base signal is copied to every channel and corrupted independently per
channel and per hour by four composable noise processes, applied in a fixed
order: additive Gaussian, multiplicative factor, spike, then NA replacement
capped at ``max_na_per_row`` missing channels per hour.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from app.exceptions import ConfigError, DataError
from app.extract.series import LocationDataset

logger = logging.getLogger(__name__)

BASE_KINDS = ('reference_file', 'sinusoid', 'sawtooth', 'exponential')
SYNTH_START = pd.Timestamp("2020-01-01", tz="UTC")


@dataclass(frozen=True)
class BaseSignalSpec:
    """
    Shape of the clean signal.

    Sinusoid and sawtooth run from ``offset`` up to ``max_value``; the
    exponential kind draws i.i.d. values with mean ``1 / rate``.
    """

    kind: str = 'sinusoid'
    offset: float = 2.0
    max_value: float = 30.0
    period: float = 48.0
    rate: float = 1.0 / 12.0
    length: int = 4000
    reference_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise ConfigError("base", f"must be one of {BASE_KINDS}, got '{self.kind}'")
        if not self.max_value > self.offset:
            raise ConfigError("base_max", f"max_value {self.max_value} must exceed offset {self.offset}")
        if not self.period > 0:
            raise ConfigError("base_period", f"must be > 0, got {self.period}")
        if not self.rate > 0:
            raise ConfigError("base_rate", f"must be > 0, got {self.rate}")
        if self.length < 0:
            raise ConfigError("length", f"must be >= 0, got {self.length}")


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_mean: float = 0.0
    gaussian_std: float = 0.0
    p_gaussian: float = 0.0
    factor: float = 1.0
    p_factor: float = 0.0
    spike_factor: float = 1.0
    p_spike: float = 0.0
    p_na: float = 0.0
    max_na_per_row: int = 0

    def __post_init__(self):
        for name in ("p_gaussian", "p_factor", "p_spike", "p_na"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"probability must lie in [0, 1], got {value}")
        if self.gaussian_std < 0:
            raise ConfigError("gaussian_std", f"must be >= 0, got {self.gaussian_std}")
        if self.max_na_per_row < 0:
            raise ConfigError("max_na_per_row", f"must be >= 0, got {self.max_na_per_row}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


NOISE_PRESETS: Dict[str, NoiseConfig] = {
    # Mixture resembling field deployments; the model is expected to recover the base.
    'realistic': NoiseConfig(gaussian_mean=3.0, gaussian_std=2.0, p_gaussian=1.0,
                             factor=1.5, p_factor=0.5, spike_factor=10.0, p_spike=0.1,
                             p_na=0.35, max_na_per_row=5),
    # Known failure mode: the corruption dominates the signal.
    'extreme': NoiseConfig(gaussian_mean=5.0, gaussian_std=2.0, p_gaussian=1.0,
                           factor=2.0, p_factor=0.7, spike_factor=10.0, p_spike=0.4,
                           p_na=0.4, max_na_per_row=5),
    'clean': NoiseConfig(),
}

# Aliases accepted by --noise.
NOISE_PRESETS['fig9'] = NOISE_PRESETS['realistic']
NOISE_PRESETS['fig10'] = NOISE_PRESETS['extreme']


def noise_preset(name: str) -> NoiseConfig:
    if name not in NOISE_PRESETS:
        raise ConfigError("noise", f"unknown preset '{name}', expected one of {sorted(NOISE_PRESETS)}")
    return NOISE_PRESETS[name]


def _read_reference(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"Reference signal file not found: {path}")
    column = 'ref' if 'ref' in frame.columns else frame.columns[-1]
    return pd.to_numeric(frame[column], errors='coerce').to_numpy(dtype=np.float64)


def gen_base(spec: BaseSignalSpec, rng: Optional[np.random.Generator] = None,
             reference: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Generate the clean signal of length ``spec.length`` hours.

    Args:
        spec (BaseSignalSpec): Signal description.
        rng (np.random.Generator, optional): Needed for the exponential kind.
        reference (np.ndarray, optional): Clean series for the
            ``reference_file`` kind; read from ``spec.reference_path`` if absent.

    Returns:
        np.ndarray: The base signal.
    """
    t = np.arange(spec.length, dtype=np.float64)
    span = spec.max_value - spec.offset
    if spec.kind == 'sinusoid':
        return spec.offset + span * (1.0 + np.sin(2.0 * np.pi * t / spec.period)) / 2.0
    if spec.kind == 'sawtooth':
        return spec.offset + span * np.mod(t, spec.period) / spec.period
    if spec.kind == 'exponential':
        if rng is None:
            raise ConfigError("seed", "the exponential base signal needs a seeded generator")
        return rng.exponential(1.0 / spec.rate, size=spec.length)
    # reference_file
    if reference is None:
        if not spec.reference_path:
            raise DataError("reference_file base signal given without a reference series")
        reference = _read_reference(spec.reference_path)
    return np.asarray(reference, dtype=np.float64).copy()


@dataclass
class SyntheticLocation:
    """
    Ground truth and its corrupted copies.

    ``channels`` has shape ``(T, C)`` with NaN for NA; ``events`` holds one
    boolean ``(T, C)`` array per noise process marking where it fired.
    """

    base: np.ndarray
    channels: np.ndarray
    seed: int
    events: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    def to_location(self, location_id: str = "synthetic", start: pd.Timestamp = SYNTH_START) -> LocationDataset:
        """Hourly location starting at ``start`` with the base signal as reference."""
        index = pd.date_range(start, periods=len(self.base), freq="h")
        columns = [f"s{i + 1}" for i in range(self.n_channels)]
        readings = pd.DataFrame(self.channels, index=index, columns=columns)
        reference = pd.Series(self.base, index=index, name='ref')
        return LocationDataset(readings, reference, location_id, [f"synthetic seed {self.seed}"])


def _cap_missing(selected: np.ndarray, max_na: int, rng: np.random.Generator) -> np.ndarray:
    # Keep a uniformly chosen subset of at most max_na selected channels per row.
    keys = np.where(selected, rng.random(selected.shape), np.inf)
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    return selected & (ranks < max_na)


def inject_noise(base, cfg: NoiseConfig, channels: int = 10, seed: int = 0) -> SyntheticLocation:
    """
    Corrupt ``channels`` copies of ``base`` independently.

    The master seed is split into one stream per channel plus one for the NA
    cap, so the result is a pure function of ``(base, cfg, channels, seed)``.
    """
    base = np.asarray(base, dtype=np.float64)
    if channels < 1:
        raise ConfigError("channels", f"must be >= 1, got {channels}")
    if cfg.max_na_per_row > channels:
        raise ConfigError("max_na_per_row", f"{cfg.max_na_per_row} exceeds the channel count {channels}")

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(channels + 1)]
    n = base.shape[0]
    values = np.empty((n, channels), dtype=np.float64)
    events = {name: np.zeros((n, channels), dtype=bool) for name in ("gaussian", "factor", "spike", "na")}

    for c in range(channels):
        rng = streams[c]
        gaussian_hit = rng.random(n) < cfg.p_gaussian
        gaussian = rng.normal(cfg.gaussian_mean, cfg.gaussian_std, n)
        factor_hit = rng.random(n) < cfg.p_factor
        spike_hit = rng.random(n) < cfg.p_spike
        na_hit = rng.random(n) < cfg.p_na

        channel = base + np.where(gaussian_hit, gaussian, 0.0)
        channel = np.where(factor_hit, channel * cfg.factor, channel)
        channel = np.where(spike_hit, channel * cfg.spike_factor, channel)
        values[:, c] = channel
        events["gaussian"][:, c] = gaussian_hit
        events["factor"][:, c] = factor_hit
        events["spike"][:, c] = spike_hit
        events["na"][:, c] = na_hit

    events["na"] = _cap_missing(events["na"], cfg.max_na_per_row, streams[channels])
    values[events["na"]] = np.nan
    logger.info(f"Generated {n} hours x {channels} channels (seed {seed}): "
                f"{int(events['spike'].sum())} spikes, {int(events['na'].sum())} NA")
    return SyntheticLocation(base, values, seed, events)


def generate_location(spec: BaseSignalSpec, cfg: NoiseConfig, channels: int = 10, seed: int = 0,
                      reference: Optional[np.ndarray] = None) -> SyntheticLocation:
    """Base signal plus noise from one master seed."""
    base_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(channels + 2)[-1])
    return inject_noise(gen_base(spec, base_rng, reference), cfg, channels, seed)
