"""Synthetic event-sequence dataset: generation, file I/O, torch tensors.

Dataset file: one JSON header line {"format": "evs-synthetic", "version": 1,
"schema": {...}} followed by one JSON sequence per line, each
{"cat": [[...] per categorical feature], "num": [[...] per numeric feature],
"t": [...], "label": int}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .schema import EvsSchema, SchemaError

FORMAT_NAME = "evs-synthetic"
FORMAT_VERSION = 1

SIGNAL_CATEGORY = 1   # planted category c* within the first categorical feature
SIGNAL_TIME_CUTOFF = 0.5
LABEL_FLIP_RATE = 0.1


@dataclass
class EvsDataset:
    schema: EvsSchema
    cat: np.ndarray     # (n, n_cat_features, seq_len) int64
    num: np.ndarray     # (n, n_num_features, seq_len) float32
    t: np.ndarray       # (n, seq_len) float32
    labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return len(self.labels)

    def tensors(self, indices=None):
        idx = np.arange(len(self)) if indices is None else np.asarray(indices)
        return (
            torch.from_numpy(self.cat[idx]),
            torch.from_numpy(self.num[idx]),
            torch.from_numpy(self.t[idx]),
            torch.from_numpy(self.labels[idx]),
        )


def planted_statistic(dataset: EvsDataset) -> np.ndarray:
    """The generator's hidden per-sequence statistic (exposed for oracles)."""
    hits = (dataset.cat[:, 0, :] == SIGNAL_CATEGORY) & (dataset.t > SIGNAL_TIME_CUTOFF)
    stat = hits.sum(axis=1).astype(np.float64)
    if dataset.num.shape[1] > 0:
        stat = stat + 0.5 * dataset.num[:, 0, :].mean(axis=1)
    return stat


def generate_synthetic_evs(schema: EvsSchema, n_sequences: int, seed: int) -> EvsDataset:
    """Irregular timestamps (sorted uniforms), random marks, and a planted
    label: the count of category c* after the time cutoff plus half the mean
    of the first numeric feature, thresholded at its median (so the positive
    rate calibrates near 0.5) and flipped with probability 0.1."""
    schema.validate()
    if not schema.categorical:
        raise SchemaError("the planted signal needs at least one categorical feature")
    if n_sequences < 1:
        raise SchemaError("n_sequences must be positive")
    rng = np.random.default_rng(seed)
    n_cat, n_num, T = len(schema.categorical), len(schema.numeric), schema.seq_len

    t = np.sort(rng.uniform(0.0, 1.0, size=(n_sequences, T)), axis=1)
    while True:  # strictly increasing timestamps (ties have ~zero probability)
        collisions = (np.diff(t, axis=1) <= 0).any(axis=1)
        if not collisions.any():
            break
        t[collisions] = np.sort(
            rng.uniform(0.0, 1.0, size=(int(collisions.sum()), T)), axis=1)

    cat = np.stack(
        [rng.integers(0, card, size=(n_sequences, T)) for _, card in schema.categorical],
        axis=1,
    ).astype(np.int64)
    num = rng.normal(0.0, 1.0, size=(n_sequences, n_num, T)).astype(np.float32)

    dataset = EvsDataset(schema=schema, cat=cat, num=num,
                         t=t.astype(np.float32), labels=np.zeros(n_sequences, np.int64))
    stat = planted_statistic(dataset)
    theta = float(np.median(stat))
    labels = (stat > theta).astype(np.int64)
    flips = rng.uniform(size=n_sequences) < LABEL_FLIP_RATE
    labels[flips] = 1 - labels[flips]
    dataset.labels = labels
    return dataset


def write_dataset(path: str | Path, dataset: EvsDataset) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
              "schema": dataset.schema.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(dataset)):
            row = {
                "cat": dataset.cat[i].tolist(),
                "num": [[float(v) for v in channel] for channel in dataset.num[i]],
                "t": [float(v) for v in dataset.t[i]],
                "label": int(dataset.labels[i]),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> EvsDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_NAME:
            raise SchemaError(f"unknown dataset format {header.get('format')!r}")
        schema = EvsSchema.from_dict(header["schema"])
        cat, num, t, labels = [], [], [], []
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            cat.append(row["cat"])
            num.append(row["num"])
            t.append(row["t"])
            labels.append(row["label"])
    n = len(labels)
    n_num = len(schema.numeric)
    return EvsDataset(
        schema=schema,
        cat=np.asarray(cat, dtype=np.int64).reshape(n, len(schema.categorical), schema.seq_len),
        num=np.asarray(num, dtype=np.float32).reshape(n, n_num, schema.seq_len),
        t=np.asarray(t, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
    )
