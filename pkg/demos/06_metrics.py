"""
Scoring saliency maps
=====================

The usual four numbers: mean absolute error, the best F-measure over 256
thresholds (with its precision/recall curve), the structure measure and the
enhanced-alignment measure.
"""

import numpy as np

from ssnet.metrics import evaluate

rng = np.random.default_rng(5)
gt = np.zeros((1, 40, 40))
gt[0, 10:28, 12:30] = 1

candidates = {
    "perfect": gt.copy(),
    "blurred": np.clip(gt + 0.3 * rng.standard_normal(gt.shape), 0, 1),
    "shifted": np.roll(gt, 6, axis=2),
    "uniform": np.full_like(gt, 0.5),
}

print(f"{'map':10s} {'MAE':>6s} {'maxF':>6s} {'S':>6s} {'maxE':>6s} {'meanE':>6s}")
for name, pred in candidates.items():
    r = evaluate(pred, gt)
    print(f"{name:10s} {r.mae:6.3f} {r.f_beta_max:6.3f} {r.s_measure:6.3f} "
          f"{r.e_measure_max:6.3f} {r.e_measure_mean:6.3f}")

# PR points for the blurred map at a few thresholds
r = evaluate(candidates["blurred"], gt)
for k in (0, 64, 128, 192, 255):
    prec, rec = r.pr_points[k]
    print(f"t = {k:3d}/255  precision {prec:.3f}  recall {rec:.3f}")
