"""Prediction-cache files shared with the search engine.

Per architecture: ``preds_<archid>.f32`` (row-major float32, little-endian)
plus ``preds_<archid>.json`` holding {"rows", "cols", "fingerprint"}. Writes
go through a temp file and an atomic rename, data before descriptor.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np


class CacheIoError(ValueError):
    pass


def example_order_fingerprint(example_ids: list) -> str:
    """SHA-256 of the canonical example-id list (JSON, compact)."""
    payload = json.dumps(list(example_ids), separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def write_predictions(cache_dir: str | Path, arch_id: str, matrix,
                      fingerprint: str) -> str:
    directory = Path(cache_dir)
    directory.mkdir(parents=True, exist_ok=True)
    mat = np.asarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise CacheIoError(f"prediction matrix must be 2-D, got {mat.shape}")
    descriptor = {"rows": int(mat.shape[0]), "cols": int(mat.shape[1]),
                  "fingerprint": fingerprint}
    data_path = directory / f"preds_{arch_id}.f32"
    desc_path = directory / f"preds_{arch_id}.json"
    for path, payload in ((data_path, mat.tobytes(order="C")),
                          (desc_path, json.dumps(descriptor).encode("utf-8"))):
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    return data_path.name


def read_predictions(cache_dir: str | Path, filename: str) -> tuple[np.ndarray, dict]:
    data_path = Path(cache_dir) / filename
    desc_path = data_path.with_suffix(".json")
    if not data_path.exists() or not desc_path.exists():
        raise CacheIoError(f"missing cache entry {filename}")
    with open(desc_path, "r", encoding="utf-8") as fh:
        descriptor = json.load(fh)
    raw = np.fromfile(data_path, dtype="<f4")
    rows, cols = descriptor["rows"], descriptor["cols"]
    if raw.size != rows * cols:
        raise CacheIoError(
            f"{filename} holds {raw.size} values, descriptor says {rows}x{cols}")
    return raw.reshape(rows, cols), descriptor
