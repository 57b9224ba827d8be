"""Feature-size and time-encoding formulas shared by the model blocks."""

from __future__ import annotations

import math

import numpy as np


def embedding_size(n: int) -> int:
    """min(600, round(1.6 * n^0.56)), rounding half away from zero."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return min(600, int(math.floor(1.6 * n**0.56 + 0.5)))


def temporal_encoding(t: float, d: int) -> np.ndarray:
    """Sinusoidal encoding of a normalized event time.

    Entry 2i is sin(t / 10000^(2i/d)) and entry 2i+1 is the matching cosine,
    so irregularly spaced events get position information from their actual
    timestamps instead of their indices.
    """
    if d < 2 or d % 2 != 0:
        raise ValueError(f"dimension must be a positive even integer, got {d}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"event time must be normalized to [0, 1], got {t}")
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = t / np.power(10000.0, i2 / d)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out
