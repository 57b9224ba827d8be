"""One training job: cross-entropy plus weighted logit-matching distillation,
per-epoch validation scoring, best-across-epochs reporting, and a prediction
cache entry for the trained model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.metrics import roc_auc_score
from torch import nn

from .caching import CacheIoError, example_order_fingerprint, read_predictions, write_predictions
from .data import EvsDataset
from .model import ArchPlan, build_model
from .schema import TrainRunConfig

_SPLIT_SEED = 1234567  # one fixed train/val split per dataset, shared by all jobs


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainOutcome:
    score: float
    metric_name: str
    per_epoch: tuple[float, ...]
    preds_file: str | None
    kd_loss_last: float | None  # final-epoch mean distillation term, for cross-checks
    train_losses: tuple[float, ...] = ()  # mean total loss per epoch


def train_val_split(n: int, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(_SPLIT_SEED).permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    val = np.sort(order[:n_val])
    train = np.sort(order[n_val:])
    return train, val


def distillation_mse(student_logits: torch.Tensor, teacher_logits: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of squared logit differences (the KD term)."""
    if student_logits.shape != teacher_logits.shape:
        raise TrainingError(
            f"logit shape mismatch: {tuple(student_logits.shape)} vs "
            f"{tuple(teacher_logits.shape)}")
    return torch.mean((student_logits - teacher_logits) ** 2)


def _load_teacher_targets(cache_dir, teacher_files, expected_fingerprint, rows, cols):
    total = None
    for name in teacher_files:
        matrix, descriptor = read_predictions(cache_dir, name)
        if descriptor["fingerprint"] != expected_fingerprint:
            raise CacheIoError(
                f"teacher {name} fingerprint {descriptor['fingerprint']} does not match "
                f"this dataset's example order {expected_fingerprint}")
        if (descriptor["rows"], descriptor["cols"]) != (rows, cols):
            raise CacheIoError(
                f"teacher {name} shape {descriptor['rows']}x{descriptor['cols']} "
                f"does not match {rows}x{cols}")
        mat = torch.from_numpy(matrix.astype(np.float32))
        total = mat if total is None else total + mat
    return total / len(teacher_files)


def _validation_score(model, val_tensors, n_classes, device) -> tuple[float, str]:
    cat, num, t, labels = val_tensors
    model.eval()
    with torch.no_grad():
        logits = model(cat.to(device), num.to(device), t.to(device)).cpu()
    model.train()
    if n_classes == 2:
        probs = torch.softmax(logits, dim=1)[:, 1].numpy()
        return float(roc_auc_score(labels.numpy(), probs)), "roc_auc"
    preds = logits.argmax(dim=1).numpy()
    return float((preds == labels.numpy()).mean()), "accuracy"


def train_one(plan: ArchPlan, dataset: EvsDataset, cfg: TrainRunConfig,
              arch_id: str, cache_dir=None, teacher_files: tuple[str, ...] = ()) -> TrainOutcome:
    cfg.validate()
    device = torch.device(cfg.device)
    torch.manual_seed(cfg.seed)

    train_idx, val_idx = train_val_split(len(dataset), cfg.val_fraction)
    fingerprint = example_order_fingerprint([int(i) for i in train_idx])
    train_tensors = dataset.tensors(train_idx)
    val_tensors = dataset.tensors(val_idx)
    cat, num, t, labels = (x.to(device) for x in train_tensors)
    n_train = len(train_idx)

    model = build_model(plan, dataset.schema, cfg).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    ce = nn.CrossEntropyLoss()

    use_kd = cfg.kd_weight > 0 and len(teacher_files) > 0
    teacher_targets = None
    if use_kd:
        if cache_dir is None:
            raise TrainingError("teacher files given but no cache directory")
        teacher_targets = _load_teacher_targets(
            cache_dir, teacher_files, fingerprint, n_train, dataset.schema.n_classes
        ).to(device)

    shuffle_rng = torch.Generator().manual_seed(cfg.seed)
    per_epoch = []
    train_losses = []
    kd_loss_last = None
    for epoch in range(cfg.epochs):
        order = torch.randperm(n_train, generator=shuffle_rng)
        kd_terms, losses = [], []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = model(cat[idx], num[idx], t[idx])
            loss = ce(logits, labels[idx])
            if use_kd:
                kd_term = distillation_mse(logits, teacher_targets[idx])
                kd_terms.append(float(kd_term.detach()))
                loss = loss + cfg.kd_weight * kd_term
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        score, metric = _validation_score(model, val_tensors, dataset.schema.n_classes, device)
        per_epoch.append(score)
        train_losses.append(float(np.mean(losses)))
        if kd_terms:
            kd_loss_last = float(np.mean(kd_terms))

    preds_file = None
    if cache_dir is not None:
        model.eval()
        with torch.no_grad():
            outputs = []
            for start in range(0, n_train, cfg.batch_size):
                sl = slice(start, start + cfg.batch_size)
                outputs.append(model(cat[sl], num[sl], t[sl]).cpu())
            full_logits = torch.cat(outputs).numpy().astype(np.float32)
        preds_file = write_predictions(cache_dir, arch_id, full_logits, fingerprint)

    return TrainOutcome(
        score=max(per_epoch),
        metric_name=metric,
        per_epoch=tuple(per_epoch),
        preds_file=preds_file,
        kd_loss_last=kd_loss_last,
        train_losses=tuple(train_losses),
    )
