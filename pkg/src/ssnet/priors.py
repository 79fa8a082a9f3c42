"""Training-free saliency priors computed from the RGB image and enhanced depth.

Three priors are produced, one per saliency assumption:

* ``S1`` -- objects in front: the Otsu foreground mask of the depth map.
* ``S2`` -- local contrast: min-max normalised sum of the RGB and depth
  morphological gradients.
* ``S3`` -- centre bias: a Gaussian mask peaked at the image centre.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import as_float, split_channels

__all__ = [
    "PriorSet",
    "otsu_threshold",
    "morphological_gradient",
    "rgb_contrast",
    "center_mask",
    "minmax_normalize",
    "compute_priors",
]

N_LEVELS = 256
CENTER_SIGMA_FRAC = 0.3


@dataclass(frozen=True)
class PriorSet:
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    O_front: np.ndarray
    O_back: np.ndarray
    C_x: np.ndarray
    C_y: np.ndarray
    M: np.ndarray
    threshold: float

    def maps(self) -> dict[str, np.ndarray]:
        """The image-valued members keyed by name (what the CLI writes out)."""
        return {
            "S1": self.S1, "S2": self.S2, "S3": self.S3, "O_front": self.O_front,
            "C_x": self.C_x, "C_y": self.C_y, "M": self.M,
        }


def quantize_levels(img) -> np.ndarray:
    """Map ``[0, 1]`` values onto the integer grey levels ``0..255``."""
    v = np.asarray(img, dtype=np.float64)
    return np.clip(np.floor(v * 255.0 + 0.5), 0, 255).astype(np.int64)


def otsu_threshold(img):
    """Otsu's threshold over a 256-bin histogram.

    Returns ``(threshold, O_front, O_back)`` where ``threshold`` is on the
    ``[0, 1]`` scale and ``O_front`` marks pixels whose grey level lies
    strictly above the threshold level. The between-class variance is
    compared exactly (integer arithmetic) and ties resolve to the lowest
    level. A single-level image yields an all-ones ``O_front``.
    """
    img = as_float(img)
    levels = quantize_levels(img)
    hist = np.bincount(levels.ravel(), minlength=N_LEVELS)
    n = int(hist.sum())
    total = int((hist * np.arange(N_LEVELS)).sum())

    best_t = None
    best_num, best_den = 0, 1
    n0 = s0 = 0
    for t in range(N_LEVELS - 1):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total - s0
        # n^2 * between-class variance == (n0*s1 - n1*s0)^2 / (n0*n1)
        num = (n0 * s1 - n1 * s0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    if best_t is None or best_num == 0:
        # one occupied level: everything counts as front
        front = np.ones_like(img)
        best_t = int(levels.min()) - 1
    else:
        front = (levels > best_t).astype(img.dtype)
    return best_t / 255.0, front, 1 - front


def morphological_gradient(img) -> np.ndarray:
    """Dilation minus erosion with a 3x3 square element and replicated borders."""
    img = as_float(img)
    if img.ndim != 3:
        raise ValueError(f"expected [C, H, W], got shape {img.shape}")
    h, w = img.shape[1:]
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    shifts = [p[:, i:i + h, j:j + w] for i in range(3) for j in range(3)]
    return np.max(shifts, axis=0) - np.min(shifts, axis=0)


def rgb_contrast(rgb) -> np.ndarray:
    rgb = as_float(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected a 3-channel [3, H, W] image, got shape {rgb.shape}")
    r, g, b = split_channels(rgb)
    return morphological_gradient(r) + morphological_gradient(g) + morphological_gradient(b)


def center_mask(h: int, w: int, dtype=np.float32) -> np.ndarray:
    if h < 1 or w < 1:
        raise ValueError(f"mask size must be positive, got {h}x{w}")
    sigma = CENTER_SIGMA_FRAC * min(h, w)
    yy = np.arange(h, dtype=np.float64) - (h - 1) / 2.0
    xx = np.arange(w, dtype=np.float64) - (w - 1) / 2.0
    d2 = yy[:, None] ** 2 + xx[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))[None].astype(dtype)


def minmax_normalize(x) -> np.ndarray:
    x = as_float(x)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return ((x - lo) / (hi - lo)).astype(x.dtype, copy=False)


def compute_priors(rgb, depth) -> PriorSet:
    """All three priors plus their intermediates for one RGB-D pair.

    ``rgb`` is ``[3, H, W]`` and ``depth`` the enhanced ``[1, H, W]`` map,
    both in ``[0, 1]``.
    """
    rgb, depth = as_float(rgb), as_float(depth)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"rgb must be [3, H, W], got {rgb.shape}")
    if depth.ndim != 3 or depth.shape[0] != 1:
        raise ValueError(f"depth must be [1, H, W], got {depth.shape}")
    if rgb.shape[1:] != depth.shape[1:]:
        raise ValueError(f"rgb {rgb.shape[1:]} and depth {depth.shape[1:]} sizes differ")
    threshold, front, back = otsu_threshold(depth)
    c_x = rgb_contrast(rgb)
    c_y = morphological_gradient(depth)
    m = center_mask(*depth.shape[1:], dtype=depth.dtype)
    return PriorSet(
        S1=front, S2=minmax_normalize(c_x + c_y), S3=m,
        O_front=front, O_back=back, C_x=c_x, C_y=c_y, M=m, threshold=threshold,
    )
