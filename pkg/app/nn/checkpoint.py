"""
Parameter checkpoint container.

A checkpoint is a UTF-8 JSON document with sorted keys:

    {
      "format": "veli-checkpoint",
      "version": 1,
      "meta": {...},                       # free-form metadata (seed, config hash, ...)
      "parameters": {
        "<name>": {"shape": [rows, cols], "data": [row-major floats]},
        ...
      }
    }

Floats are written with Python's shortest round-trip representation, so
``loads_checkpoint(dumps_checkpoint(p))`` restores every float64 bit for bit and
identical parameters always serialise to identical bytes.
"""

import json
import hashlib
from typing import Any, Dict, Tuple

import numpy as np

from app.exceptions import DataError

FORMAT_NAME = 'veli-checkpoint'
FORMAT_VERSION = 1


def dumps_checkpoint(parameters: Dict[str, np.ndarray], meta: Dict[str, Any]) -> str:
    body = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta,
        "parameters": {
            name: {
                "shape": list(array.shape),
                "data": [float(v) for v in np.asarray(array, dtype=np.float64).ravel(order='C')],
            }
            for name, array in parameters.items()
        },
    }
    return json.dumps(body, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads_checkpoint(text: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        body = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"Checkpoint is not valid JSON: {e}")
    if body.get("format") != FORMAT_NAME:
        raise DataError("Not a veli checkpoint", {"format": body.get("format")})
    if body.get("version") != FORMAT_VERSION:
        raise DataError("Unsupported checkpoint version", {"version": body.get("version")})
    params = {}
    for name, entry in body["parameters"].items():
        params[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return params, body.get("meta", {})


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
