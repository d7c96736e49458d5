"""
Output writers for the Veli correction toolkit.

Every file is written to a temporary sibling first and renamed into place, so
a failed run never leaves a truncated output behind.
"""

import hashlib
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app import __version__
from app.extract.series import LocationDataset
from app.evaluate.report import EvalReport
from app.model.inference import CorrectedReading
from app.model.veli import LossBreakdown, VeliModel

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
MANIFEST_NAME = "manifest.json"


@contextmanager
def atomic_output(path: str):
    """
    Provide a text handle whose content replaces ``path`` only on success.

    Yields:
        file: Handle of a temporary file in the target directory.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            yield handle
        os.replace(tmp_path, path)
    except Exception as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def location_frame(location: LocationDataset, reading: Optional[CorrectedReading] = None,
                   fused: Optional[np.ndarray] = None, fused_std: Optional[np.ndarray] = None) -> pd.DataFrame:
    """
    Tabulate a location in the CSV layout ``timestamp,s1..sd[,ref][,yhat_i,ystd_i,ylo_i,yhi_i...][,yhat,ystd]``.
    """
    frame = location.readings.copy()
    frame.insert(0, 'timestamp', location.readings.index.strftime(TIMESTAMP_FORMAT))
    if location.reference is not None:
        frame['ref'] = location.reference.to_numpy()
    if reading is not None:
        for i in range(reading.y_hat.shape[1]):
            frame[f'yhat_{i + 1}'] = reading.y_hat[:, i]
            frame[f'ystd_{i + 1}'] = reading.y_std[:, i]
            frame[f'ylo_{i + 1}'] = reading.lower[:, i]
            frame[f'yhi_{i + 1}'] = reading.upper[:, i]
    if fused is not None:
        frame['yhat'] = fused
    if fused_std is not None:
        frame['ystd'] = fused_std
    return frame


class OutputWriter:
    """
    Writer for everything a run produces under one output directory.

    Args:
        out_dir (str): Target directory, created on demand.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)
        logger.info(f"Initialized output writer for {out_dir}")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_text(self, name: str, text: str) -> str:
        target = self.path(name)
        with atomic_output(target) as handle:
            handle.write(text)
        if name not in self.written:
            self.written.append(name)
        logger.info(f"Wrote {target}")
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> str:
        return self.write_text(name, frame.to_csv(index=False, lineterminator="\n", na_rep=""))

    def write_location_csv(self, name: str, location: LocationDataset, reading: Optional[CorrectedReading] = None,
                           fused: Optional[np.ndarray] = None, fused_std: Optional[np.ndarray] = None) -> str:
        return self.write_frame(name, location_frame(location, reading, fused, fused_std))

    def write_checkpoint(self, name: str, model: VeliModel, meta: Optional[Dict[str, Any]] = None) -> str:
        return self.write_text(name, model.to_checkpoint(meta))

    def write_report(self, name: str, report: EvalReport) -> str:
        return self.write_text(name, report.to_text())

    def write_history(self, name: str, history: Sequence[LossBreakdown]) -> str:
        frame = pd.DataFrame([h.to_dict() for h in history], columns=['kl_z', 'kl_y', 'recon_nll', 'total'])
        frame.insert(0, 'epoch', np.arange(1, len(frame) + 1))
        return self.write_frame(name, frame)

    def write_histograms(self, name: str, tables: Dict[str, pd.DataFrame]) -> str:
        parts = []
        for series_name, table in tables.items():
            part = table.copy()
            part.insert(0, 'series', series_name)
            parts.append(part)
        return self.write_frame(name, pd.concat(parts, ignore_index=True))

    def _digest(self, name: str) -> str:
        with open(self.path(name), "rb") as handle:
            return hashlib.sha256(handle.read()).hexdigest()

    def write_manifest(self, config: Dict[str, Any], config_hash: str, seeds: Sequence[int],
                       extra: Optional[Dict[str, Any]] = None) -> str:
        """
        Record what produced the directory: resolved config, its hash, seeds,
        package version and a SHA-256 of every written file.
        """
        body = {
            "version": __version__,
            "config": config,
            "config_hash": config_hash,
            "seeds": [int(s) for s in seeds],
            "files": {name: self._digest(name) for name in sorted(self.written) if name != MANIFEST_NAME},
        }
        body.update(extra or {})
        return self.write_text(MANIFEST_NAME, json.dumps(body, sort_keys=True, indent=2) + "\n")
