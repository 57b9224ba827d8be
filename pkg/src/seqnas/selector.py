"""Batch Thompson sampling over surrogate predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .surrogate import ScorePrediction


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionRequest:
    predictions: Sequence[ScorePrediction]
    count: int


def thompson_select(req: SelectionRequest, rng: np.random.Generator) -> list[int]:
    """Draw one sample per candidate from Normal(mean, std) and return the
    indices of the `count` largest draws, largest first. A zero std is a
    point mass at the mean. Selection is without replacement via a single
    joint draw; ties resolve to the lower index."""
    if not req.predictions:
        raise SelectionError("empty candidate list")
    if req.count < 1:
        raise SelectionError(f"selection count must be >= 1, got {req.count}")
    means = np.asarray([p.mean for p in req.predictions], dtype=np.float64)
    stds = np.asarray([p.std for p in req.predictions], dtype=np.float64)
    if not np.all(np.isfinite(means)):
        raise SelectionError("candidate means must be finite")
    if np.any(stds < 0) or not np.all(np.isfinite(stds)):
        raise SelectionError("candidate stds must be finite and non-negative")

    draws = means + stds * rng.standard_normal(len(means))
    order = np.argsort(-draws, kind="stable")
    take = min(req.count, len(order))
    return [int(i) for i in order[:take]]


def analytic_two_candidate_win_rate(delta: float, std_a: float, std_b: float) -> float:
    """P(draw_b > draw_a) for independent normals with mean gap delta = mu_b - mu_a."""
    spread = math.hypot(std_a, std_b)
    if spread == 0:
        return 1.0 if delta > 0 else (0.5 if delta == 0 else 0.0)
    return 0.5 * (1.0 + math.erf(delta / (spread * math.sqrt(2.0))))
