"""Saliency evaluation: MAE, max F-beta with PR curve, S-measure, E-measure.

Predictions are real maps in ``[0, 1]``; ground truth is binarised at 0.5
for every metric except MAE, which uses it as given. All thresholded
metrics sweep the 256 thresholds ``t = k / 255`` and binarise with
``pred > t``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricReport",
    "mae",
    "f_beta",
    "s_measure",
    "e_measure",
    "evaluate",
    "evaluate_dataset",
    "report_to_json",
]

BETA2 = 0.3
ALPHA = 0.5
N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / 255.0
_EPS = np.finfo(np.float64).eps


@dataclass
class MetricReport:
    mae: float
    f_beta_max: float
    s_measure: float
    e_measure_max: float
    e_measure_mean: float
    pr_points: np.ndarray = field(repr=False)  # [256, 2] (precision, recall)


def _prep(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} and gt {g.shape} differ")
    return np.squeeze(p), np.squeeze(g)


def mae(pred, gt) -> float:
    p, g = _prep(pred, gt)
    return float(np.mean(np.abs(p - g)))


def _binary_sweep(p, g_bool):
    """True/false positive counts for every threshold via one sort of the predictions."""
    pos = p[g_bool]
    neg = p[~g_bool]
    # number of predictions strictly above each threshold
    tp = pos.size - np.searchsorted(np.sort(pos), THRESHOLDS, side="right")
    fp = neg.size - np.searchsorted(np.sort(neg), THRESHOLDS, side="right")
    return tp, fp


def f_beta(pred, gt):
    """Maximum F-beta (beta^2 = 0.3) and the 256 (precision, recall) points."""
    p, g = _prep(pred, gt)
    gb = g > 0.5
    n_pos = int(gb.sum())
    tp, fp = _binary_sweep(p, gb)
    predicted = tp + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0 if n_pos == 0 else 0.0)
        recall = tp / n_pos if n_pos else np.ones(N_THRESHOLDS)
        denom = BETA2 * precision + recall
        f = np.where(denom > 0, (1 + BETA2) * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return float(f.max()), np.stack([precision, recall], axis=1)


def _object_score(x, mask):
    vals = x[mask]
    mu = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + _EPS)


def _s_object(p, gb):
    u = gb.mean()
    fg = np.where(gb, p, 0.0)
    bg = np.where(~gb, 1 - p, 0.0)
    return u * _object_score(fg, gb) + (1 - u) * _object_score(bg, ~gb)


def _region_ssim(p, g):
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    if n > 1:
        sx = ((p - x) ** 2).sum() / (n - 1)
        sy = ((g - y) ** 2).sum() / (n - 1)
        sxy = ((p - x) * (g - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def _split_candidates(count_per_index):
    """Split positions around the foreground centroid along one axis.

    The centroid is taken in pixel-edge coordinates (pixel ``i`` spans
    ``[i, i + 1]``) and rounded to the nearest grid line. On an exact tie both
    neighbouring lines are returned so the caller can average them; this keeps
    the measure invariant under mirroring the maps.
    """
    idx = np.arange(count_per_index.size)
    n = int(count_per_index.sum())
    # centroid * 2n, in integers: sum(2*i + 1) over foreground pixels
    twice = int((count_per_index * (2 * idx + 1)).sum())
    lo, rem = divmod(twice, 2 * n)
    if rem == n:
        return [lo, lo + 1]
    return [lo + 1] if rem > n else [lo]


def _s_region(p, gb):
    h, w = gb.shape
    g = gb.astype(np.float64)
    rows = _split_candidates(gb.sum(axis=1))
    cols = _split_candidates(gb.sum(axis=0))
    scores = []
    for y in rows:
        for x in cols:
            total = 0.0
            for rs, cs in ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
                           (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))):
                pr, gr = p[rs, cs], g[rs, cs]
                total += pr.size / (h * w) * _region_ssim(pr, gr)
            scores.append(total)
    return float(np.mean(scores))


def s_measure(pred, gt) -> float:
    """Structure measure: 0.5 * object-aware + 0.5 * region-aware similarity."""
    p, g = _prep(pred, gt)
    gb = g > 0.5
    y = gb.mean()
    if y == 0:
        return float(1 - p.mean())
    if y == 1:
        return float(p.mean())
    q = ALPHA * _s_object(p, gb) + (1 - ALPHA) * _s_region(p, gb)
    return float(min(max(q, 0.0), 1.0))


def e_measure(pred, gt):
    """Enhanced-alignment measure: ``(max, mean)`` over the 256 binarisations."""
    p, g = _prep(pred, gt)
    gb = g > 0.5
    n = gb.size
    n_fg = int(gb.sum())
    scores = np.empty(N_THRESHOLDS)
    for k, t in enumerate(THRESHOLDS):
        fm = p > t
        if n_fg == 0:
            scores[k] = np.count_nonzero(~fm) / n
        elif n_fg == n:
            scores[k] = np.count_nonzero(fm) / n
        else:
            a = fm - fm.mean()
            b = gb - gb.mean()
            align = 2 * a * b / (a * a + b * b + _EPS)
            scores[k] = ((align + 1) ** 2 / 4).sum() / n
    return float(scores.max()), float(scores.mean())


def evaluate(pred, gt) -> MetricReport:
    f_max, pr = f_beta(pred, gt)
    e_max, e_mean = e_measure(pred, gt)
    return MetricReport(mae(pred, gt), f_max, s_measure(pred, gt), e_max, e_mean, pr)


def _aggregate(reports) -> MetricReport:
    if not reports:
        raise ValueError("no images to evaluate")
    mean = lambda attr: float(np.mean([getattr(r, attr) for r in reports]))  # noqa: E731
    return MetricReport(
        mean("mae"), mean("f_beta_max"), mean("s_measure"),
        mean("e_measure_max"), mean("e_measure_mean"),
        np.mean([r.pr_points for r in reports], axis=0),
    )


def evaluate_dataset(pred_dir, gt_dir) -> MetricReport:
    """Average per-image metrics over predictions matched to ground truth by file name."""
    from .imageio import read_image

    names = sorted(f for f in os.listdir(pred_dir) if f.lower().endswith((".pgm", ".ppm")))
    if not names:
        raise ValueError(f"no PGM predictions found in {pred_dir}")
    reports = []
    for name in names:
        gt_path = os.path.join(gt_dir, name)
        if not os.path.exists(gt_path):
            raise FileNotFoundError(f"no ground truth for {name!r} in {gt_dir}")
        pred = read_image(os.path.join(pred_dir, name))
        gt = read_image(gt_path)
        reports.append(evaluate(pred, gt))
    return _aggregate(reports)


def report_to_json(report: MetricReport) -> str:
    """JSON text with every number printed in 6-decimal fixed notation."""
    fmt = lambda v: f"{v:.6f}"  # noqa: E731
    keys = ("mae", "f_beta_max", "s_measure", "e_measure_max", "e_measure_mean")
    body = [f'  "{k}": {fmt(getattr(report, k))}' for k in keys]
    pr = ", ".join(f"[{fmt(p)}, {fmt(r)}]" for p, r in report.pr_points)
    body.append(f'  "pr": [{pr}]')
    text = "{\n" + ",\n".join(body) + "\n}\n"
    json.loads(text)  # guard: must stay valid JSON
    return text
