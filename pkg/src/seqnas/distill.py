"""Ensemble-of-teachers bookkeeping: the prediction cache on disk, top-K
teacher selection, target averaging, and the reference distillation loss.

Cache entries are one float32 matrix per architecture (rows = training
examples in a fixed canonical order, columns = class logits) plus a JSON
sidecar descriptor. Entries are write-once; writes go through a temporary
file and an atomic rename so readers never observe partial data.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np


class CacheError(ValueError):
    pass


class DistillError(ValueError):
    pass


def data_filename(arch_id: str) -> str:
    return f"preds_{arch_id}.f32"


def descriptor_filename(arch_id: str) -> str:
    return f"preds_{arch_id}.json"


class PredictionCache:
    """Directory-backed map from architecture id to a cached logit matrix."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _paths(self, arch_id: str) -> tuple[Path, Path]:
        return (self.directory / data_filename(arch_id),
                self.directory / descriptor_filename(arch_id))

    def has(self, arch_id: str) -> bool:
        data, desc = self._paths(arch_id)
        return desc.exists() and data.exists()

    def descriptor(self, arch_id: str) -> dict:
        _, desc = self._paths(arch_id)
        if not desc.exists():
            raise CacheError(f"no cache entry for architecture {arch_id}")
        with open(desc, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def entries(self) -> list[str]:
        prefix, suffix = "preds_", ".json"
        return sorted(
            p.name[len(prefix):-len(suffix)]
            for p in self.directory.glob("preds_*.json")
        )

    def _expected_descriptor(self) -> dict | None:
        ids = self.entries()
        return self.descriptor(ids[0]) if ids else None

    def put(self, arch_id: str, matrix, fingerprint: str) -> str:
        """Write one entry atomically; entries are immutable once written."""
        data_path, desc_path = self._paths(arch_id)
        if desc_path.exists():
            raise CacheError(f"cache entry for {arch_id} already exists (entries are write-once)")
        mat = np.asarray(matrix, dtype="<f4")
        if mat.ndim != 2:
            raise CacheError(f"prediction matrix must be 2-D, got shape {mat.shape}")
        descriptor = {"rows": int(mat.shape[0]), "cols": int(mat.shape[1]),
                      "fingerprint": fingerprint}
        expected = self._expected_descriptor()
        if expected is not None and expected != descriptor:
            raise CacheError(
                f"descriptor {descriptor} for {arch_id} does not match the run's "
                f"established descriptor {expected}"
            )
        # data first, then the descriptor that makes the entry visible
        for path, payload in ((data_path, mat.tobytes(order="C")),
                              (desc_path, json.dumps(descriptor).encode("utf-8"))):
            tmp = path.with_suffix(path.suffix + ".tmp")
            with open(tmp, "wb") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        return arch_id

    def get(self, arch_id: str, row_indices=None) -> np.ndarray:
        data_path, _ = self._paths(arch_id)
        desc = self.descriptor(arch_id)
        raw = np.fromfile(data_path, dtype="<f4")
        rows, cols = desc["rows"], desc["cols"]
        if raw.size != rows * cols:
            raise CacheError(
                f"cache entry {arch_id} holds {raw.size} values, descriptor says {rows}x{cols}"
            )
        mat = raw.reshape(rows, cols)
        if row_indices is not None:
            mat = mat[np.asarray(row_indices, dtype=np.intp)]
        return mat


class ScoredRecord(Protocol):
    arch_id: str
    score: float


@dataclass(frozen=True)
class TeacherEnsemble:
    teacher_ids: tuple[str, ...]  # best score first

    @property
    def size(self) -> int:
        return len(self.teacher_ids)


def select_teachers(records: Sequence[ScoredRecord], k: int,
                    cache: PredictionCache) -> TeacherEnsemble:
    """Top-k records by score (higher is better), ties by ascending id."""
    if not records:
        raise DistillError("cannot select teachers from an empty record list")
    if k < 1:
        raise DistillError(f"teacher count must be >= 1, got {k}")
    for r in records:
        if not np.isfinite(r.score):
            raise DistillError(f"record {r.arch_id} has a non-finite score")
        if not cache.has(r.arch_id):
            raise DistillError(f"record {r.arch_id} has no cached predictions")
    ranked = sorted(records, key=lambda r: (-r.score, r.arch_id))
    return TeacherEnsemble(teacher_ids=tuple(r.arch_id for r in ranked[:k]))


def ensemble_targets(cache: PredictionCache, ensemble: TeacherEnsemble,
                     row_indices=None) -> np.ndarray:
    """Element-wise mean of the teachers' logit matrices (float64)."""
    if not ensemble.teacher_ids:
        raise DistillError("teacher ensemble is empty")
    reference = cache.descriptor(ensemble.teacher_ids[0])
    total = None
    for arch_id in ensemble.teacher_ids:
        desc = cache.descriptor(arch_id)
        if desc != reference:
            raise DistillError(
                f"teacher {arch_id} descriptor {desc} mismatches {reference}"
            )
        mat = cache.get(arch_id, row_indices).astype(np.float64)
        total = mat if total is None else total + mat
    return total / len(ensemble.teacher_ids)


def kd_loss(student_logits, teacher_logits) -> float:
    """Mean over all elements of squared differences. This is the reference
    the external trainer must match numerically."""
    a = np.asarray(student_logits, dtype=np.float64)
    b = np.asarray(teacher_logits, dtype=np.float64)
    if a.shape != b.shape:
        raise DistillError(f"shape mismatch: student {a.shape} vs teacher {b.shape}")
    if a.size == 0:
        raise DistillError("empty logit matrices")
    return float(np.mean((a - b) ** 2))
