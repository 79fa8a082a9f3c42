"""Adaptive contrast enhancement (ACE) of depth maps.

The depth map is stretched linearly between two percentile bounds and
saturated outside them, so that a low-contrast depth capture spans the
full ``[0, 1]`` range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_core import as_float

__all__ = ["AceBounds", "percentile_bounds", "ace", "enhance_depth"]

DEFAULT_LOW_PCT = 1.0
DEFAULT_HIGH_PCT = 1.0


@dataclass(frozen=True)
class AceBounds:
    low: float
    high: float
    low_pct: float = DEFAULT_LOW_PCT
    high_pct: float = DEFAULT_HIGH_PCT

    def __post_init__(self):
        if not (0.0 <= self.low <= self.high <= 1.0):
            raise ValueError(f"need 0 <= low <= high <= 1, got low={self.low}, high={self.high}")
        for name in ("low_pct", "high_pct"):
            v = getattr(self, name)
            if not (0.0 <= v < 50.0):
                raise ValueError(f"{name} must be in [0, 50), got {v}")


def _nearest_rank(p: float, n: int) -> int:
    # half-up rounding, clamped to a valid index
    return min(max(int(math.floor(p * (n - 1) + 0.5)), 0), n - 1)


def percentile_bounds(depth, low_pct: float = DEFAULT_LOW_PCT,
                      high_pct: float = DEFAULT_HIGH_PCT) -> AceBounds:
    """Nearest-rank lower/upper percentiles of the pixel values of ``depth``."""
    values = np.sort(np.asarray(depth, dtype=np.float64).ravel())
    n = values.size
    if n == 0:
        raise ValueError("cannot compute percentiles of an empty depth map")
    if not (0.0 <= low_pct < 50.0 and 0.0 <= high_pct < 50.0):
        raise ValueError(f"percentages must be in [0, 50), got {low_pct}, {high_pct}")
    lo_idx = _nearest_rank(low_pct / 100.0, n)
    hi_idx = _nearest_rank(1.0 - high_pct / 100.0, n)
    hi_idx = max(hi_idx, lo_idx)
    low = float(np.clip(values[lo_idx], 0.0, 1.0))
    high = float(np.clip(values[hi_idx], 0.0, 1.0))
    return AceBounds(low, high, low_pct, high_pct)


def ace(depth, bounds: AceBounds) -> np.ndarray:
    """Linear stretch of ``depth`` onto ``[0, 1]`` between ``bounds``.

    Values below ``bounds.low`` saturate to 0, values above ``bounds.high``
    to 1. A degenerate range (``low == high``) maps every pixel to 0.5.
    """
    depth = as_float(depth)
    if bounds.high == bounds.low:
        return np.full_like(depth, 0.5)
    out = (depth - depth.dtype.type(bounds.low)) / depth.dtype.type(bounds.high - bounds.low)
    return np.clip(out, 0.0, 1.0).astype(depth.dtype, copy=False)


def enhance_depth(depth, low_pct: float = DEFAULT_LOW_PCT, high_pct: float = DEFAULT_HIGH_PCT,
                  invert: bool = False) -> np.ndarray:
    """Per-image ACE. ``invert`` flips the depth convention (near = dark) first."""
    depth = as_float(depth)
    if invert:
        depth = 1 - depth
    return ace(depth, percentile_bounds(depth, low_pct, high_pct))
