"""
Stretching a depth map
======================

Raw depth maps often use only a narrow band of grey levels. The contrast
enhancement step finds the 1st and 99th percentile levels and maps that band
linearly onto [0, 1], saturating everything outside it.
"""

import numpy as np

from ssnet import enhance_depth, percentile_bounds

rng = np.random.default_rng(0)

# a synthetic scene: background around 0.35, an object around 0.5,
# plus a handful of sensor outliers at both extremes
depth = 0.35 + 0.02 * rng.standard_normal((1, 48, 64))
depth[0, 14:34, 20:44] += 0.15
depth[0, rng.integers(0, 48, 6), rng.integers(0, 64, 6)] = 0.0
depth[0, rng.integers(0, 48, 6), rng.integers(0, 64, 6)] = 1.0
depth = np.clip(depth, 0, 1)

b = percentile_bounds(depth)
print(f"bounds: low={b.low:.3f} high={b.high:.3f}")
print(f"raw range used:      {depth.min():.3f} .. {depth.max():.3f}")

enhanced = enhance_depth(depth)
print(f"enhanced range:      {enhanced.min():.3f} .. {enhanced.max():.3f}")

# The object / background gap grows by the stretch factor 1 / (high - low).
obj = depth[0, 14:34, 20:44].mean() - depth[0, :10].mean()
obj_e = enhanced[0, 14:34, 20:44].mean() - enhanced[0, :10].mean()
print(f"object-background gap: {obj:.3f} -> {obj_e:.3f}")

# Outliers no longer squeeze the useful range: they are simply clipped.
print("pixels saturated at 0:", int((enhanced == 0).sum()), " at 1:", int((enhanced == 1).sum()))
