"""
Evaluation report and its text serialization.

A report is a UTF-8 text file of sections::

    [summary]
    location_id=utrecht
    mae_raw_mean=24.77
    ...
    [hit_rate]
    eps,method,raw
    0.0,0.01,0.0
    ...
    [autocorr]
    lag,method,raw,ref
    1,0.93,0.97,0.91
    ...

``[summary]`` holds ``key=value`` lines; the other sections are CSV tables.
Floats use their shortest round-trip representation, so identical reports
serialise to identical bytes.
"""

import io
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.exceptions import DataError

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ('location_id', 'experiment', 'n_hours', 'n_sensors', 'mae_raw_mean', 'mae_method',
                  'mae_pca', 'mae_kf', 'recovered', 'seed_mean', 'seed_std')


@dataclass
class EvalReport:
    """
    Accuracy of one corrected location against its reference.

    ``recovered`` is false when the correction does not beat the raw sensor
    mean by the configured margin.
    """

    location_id: str
    mae_raw_mean: float
    mae_method: float
    hit_rate: List[Tuple[float, float]]
    autocorr: np.ndarray
    seed_stats: Optional[Tuple[float, float]] = None
    mae_pca: Optional[float] = None
    mae_kf: Optional[float] = None
    recovered: bool = True
    experiment: str = "eval"
    n_hours: int = 0
    n_sensors: int = 0
    hit_rate_raw: Optional[List[Tuple[float, float]]] = None
    autocorr_raw: Optional[np.ndarray] = None
    autocorr_ref: Optional[np.ndarray] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        fractions = np.array([f for _, f in self.hit_rate], dtype=np.float64)
        if fractions.size and ((fractions < 0).any() or (fractions > 1).any() or (np.diff(fractions) < 0).any()):
            raise DataError("Hit-rate fractions must lie in [0, 1] and be non-decreasing")
        self.autocorr = np.asarray(self.autocorr, dtype=np.float64)

    def summary(self) -> Dict[str, Any]:
        values = {
            'location_id': self.location_id,
            'experiment': self.experiment,
            'n_hours': self.n_hours,
            'n_sensors': self.n_sensors,
            'mae_raw_mean': self.mae_raw_mean,
            'mae_method': self.mae_method,
            'mae_pca': self.mae_pca,
            'mae_kf': self.mae_kf,
            'recovered': self.recovered,
            'seed_mean': self.seed_stats[0] if self.seed_stats else None,
            'seed_std': self.seed_stats[1] if self.seed_stats else None,
        }
        values.update(self.extra)
        return values

    def to_text(self) -> str:
        lines = ["[summary]"]
        for key, value in self.summary().items():
            lines.append(f"{key}={_format_value(value)}")

        hit = pd.DataFrame(self.hit_rate, columns=['eps', 'method'])
        if self.hit_rate_raw is not None:
            hit['raw'] = [f for _, f in self.hit_rate_raw]
        lags = np.arange(1, self.autocorr.size + 1)
        acf = pd.DataFrame({'lag': lags, 'method': self.autocorr})
        if self.autocorr_raw is not None:
            acf['raw'] = self.autocorr_raw
        if self.autocorr_ref is not None:
            acf['ref'] = self.autocorr_ref

        return "\n".join(lines) + "\n[hit_rate]\n" + _table(hit) + "[autocorr]\n" + _table(acf)

    @classmethod
    def from_text(cls, text: str) -> 'EvalReport':
        sections = _split_sections(text)
        if 'summary' not in sections:
            raise DataError("Report has no [summary] section")
        summary = {}
        for line in sections['summary'].splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                summary[key.strip()] = _parse_value(value.strip())
        hit = pd.read_csv(io.StringIO(sections.get('hit_rate', 'eps,method\n')))
        acf = pd.read_csv(io.StringIO(sections.get('autocorr', 'lag,method\n')))
        seed_stats = None
        if summary.get('seed_mean') is not None:
            seed_stats = (summary['seed_mean'], summary['seed_std'])
        extra = {k: v for k, v in summary.items() if k not in SUMMARY_FIELDS}
        return cls(
            location_id=str(summary.get('location_id', '')),
            mae_raw_mean=summary['mae_raw_mean'],
            mae_method=summary['mae_method'],
            hit_rate=list(zip(hit['eps'].astype(float), hit['method'].astype(float))),
            autocorr=acf['method'].to_numpy(dtype=np.float64),
            seed_stats=seed_stats,
            mae_pca=summary.get('mae_pca'),
            mae_kf=summary.get('mae_kf'),
            recovered=bool(summary.get('recovered', True)),
            experiment=str(summary.get('experiment', 'eval')),
            n_hours=int(summary.get('n_hours') or 0),
            n_sensors=int(summary.get('n_sensors') or 0),
            hit_rate_raw=list(zip(hit['eps'], hit['raw'])) if 'raw' in hit else None,
            autocorr_raw=acf['raw'].to_numpy(dtype=np.float64) if 'raw' in acf else None,
            autocorr_ref=acf['ref'].to_numpy(dtype=np.float64) if 'ref' in acf else None,
            extra=extra,
        )


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse_value(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _table(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n", na_rep="")


def _split_sections(text: str) -> Dict[str, str]:
    sections: Dict[str, List[str]] = {}
    current = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    return {name: "\n".join(body) + "\n" for name, body in sections.items()}
