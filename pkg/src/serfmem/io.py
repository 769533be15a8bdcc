"""CSV/JSON writers with round-trip float formatting and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__

SCHEMA_VERSION = 1


def fmt(value) -> str:
    """17 significant digits for floats, so parsing returns the identical double."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        # JSON has no inf/nan; keep them as strings
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")
    return path


def config_hash(config: dict) -> str:
    blob = json.dumps(_json_safe(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def versions() -> dict:
    return {
        "serfmem": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def manifest(experiment: str, config: dict, seed: int, outputs) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "config": config,
        "config_hash": config_hash(config),
        "seed": int(seed),
        "versions": versions(),
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
