"""Bench dataset files: tables of (architecture, best score) rows.

File format: one JSON header line declaring the format version, the feature
layout fingerprint, the expected feature-vector length and the field schema,
followed by one JSON record per line. Scores round-trip bit-exactly
(shortest-repr decimal serialization). Conventional extension:
``.bench.jsonl``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .avec import encode, feature_layout
from .space import ArchitectureSpec, SearchSpaceConfig

FORMAT_NAME = "seqnas-bench"
FORMAT_VERSION = 1
METHODS = ("ours", "random")
FIELDS = ("dataset", "method", "avec", "best_score", "metric_name", "spec")


class BenchFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BenchRecord:
    dataset: str
    method: str  # ours | random
    avec: tuple[int, ...]
    best_score: float
    metric_name: str = "unknown"
    spec: ArchitectureSpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise BenchFormatError(f"method must be one of {METHODS}, got {self.method!r}")
        if any(b not in (0, 1) for b in self.avec):
            raise BenchFormatError("avec entries must be 0 or 1")

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "avec": list(self.avec),
            "best_score": self.best_score,
            "metric_name": self.metric_name,
            "spec": None if self.spec is None else self.spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchRecord":
        spec = d.get("spec")
        return cls(
            dataset=str(d["dataset"]),
            method=str(d["method"]),
            avec=tuple(int(b) for b in d["avec"]),
            best_score=float(d["best_score"]),
            metric_name=str(d.get("metric_name", "unknown")),
            spec=None if spec is None else ArchitectureSpec.from_dict(spec),
        )


def write_bench(path: str | Path, records: Sequence[BenchRecord], layout_fp: str) -> None:
    lengths = {len(r.avec) for r in records}
    if len(lengths) > 1:
        raise BenchFormatError(f"records mix feature-vector lengths: {sorted(lengths)}")
    avec_len = lengths.pop() if lengths else 0
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layout_fp": layout_fp,
        "avec_len": avec_len,
        "fields": list(FIELDS),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_bench(path: str | Path) -> tuple[list[BenchRecord], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise BenchFormatError("missing header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise BenchFormatError(f"malformed header line: {exc}") from exc
        if header.get("format") != FORMAT_NAME:
            raise BenchFormatError(f"unknown format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise BenchFormatError(f"unsupported version {header.get('version')!r}")
        avec_len = header.get("avec_len")
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = BenchRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise BenchFormatError(f"line {lineno}: malformed record: {exc}") from exc
            if avec_len is not None and len(rec.avec) != avec_len:
                raise BenchFormatError(
                    f"line {lineno}: avec length {len(rec.avec)} differs from header {avec_len}")
            records.append(rec)
    return records, header


def validate_against_space(records: Sequence[BenchRecord], cfg: SearchSpaceConfig) -> list[str]:
    """Cross-checks that need a config: layout length and spec/avec agreement."""
    layout = feature_layout(cfg)
    problems = []
    for i, rec in enumerate(records):
        if len(rec.avec) != len(layout):
            problems.append(f"record {i}: avec length {len(rec.avec)} != layout {len(layout)}")
            continue
        if rec.spec is not None and encode(rec.spec, cfg, layout).bits != rec.avec:
            problems.append(f"record {i}: encode(spec) does not reproduce the stored avec")
    return problems


def histogram(records: Sequence[BenchRecord], bins: int) -> list[tuple[float, int]]:
    """Equal-width score bins over [min, max]; the rightmost bin is closed.
    A degenerate range puts all mass in the first bin."""
    if not records:
        raise BenchFormatError("cannot build a histogram from zero records")
    if bins < 1:
        raise BenchFormatError(f"bins must be >= 1, got {bins}")
    scores = [r.best_score for r in records]
    lo, hi = min(scores), max(scores)
    width = (hi - lo) / bins
    counts = [0] * bins
    for s in scores:
        idx = 0 if width == 0 else min(int((s - lo) / width), bins - 1)
        counts[idx] += 1
    return [(lo + i * width, counts[i]) for i in range(bins)]


def to_surrogate_dataset(records: Sequence[BenchRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(feature matrix, score vector) in record order."""
    if not records:
        return np.zeros((0, 0)), np.zeros(0)
    lengths = {len(r.avec) for r in records}
    if len(lengths) > 1:
        raise BenchFormatError(f"records mix feature-vector lengths: {sorted(lengths)}")
    X = np.asarray([r.avec for r in records], dtype=np.float64)
    y = np.asarray([r.best_score for r in records], dtype=np.float64)
    return X, y


def synthesize_bench_records(
    cfg: SearchSpaceConfig,
    dataset: str,
    method: str,
    count: int,
    seed: int,
    noise_std: float = 0.0,
) -> list[BenchRecord]:
    """Bench rows produced by the synthetic evaluator over distinct sampled
    architectures; the hidden function is keyed by the dataset name so
    different datasets disagree about what scores well."""
    from .evaluators import EvalRequest, SyntheticEvaluator
    from .space import canonical_id, sample_architecture

    bench_seed = int.from_bytes(dataset.encode("utf-8")[:4].ljust(4, b"\0"), "big") ^ seed
    evaluator = SyntheticEvaluator(cfg, bench_seed=bench_seed, noise_std=noise_std)
    layout = feature_layout(cfg)
    rng = np.random.default_rng([seed, bench_seed])
    records, seen = [], set()
    while len(records) < count:
        spec = sample_architecture(cfg, rng)
        arch_id = canonical_id(spec)
        if arch_id in seen:
            continue
        seen.add(arch_id)
        result = evaluator.evaluate(EvalRequest(arch_id=arch_id, spec=spec, seed=seed))
        records.append(BenchRecord(
            dataset=dataset,
            method=method,
            avec=encode(spec, cfg, layout).bits,
            best_score=result.score,
            metric_name=result.metric_name,
            spec=spec,
        ))
    return records
