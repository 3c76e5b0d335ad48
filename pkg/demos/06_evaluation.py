"""Segmentation metrics and configuration comparison reports.

Run: python3 demos/06_evaluation.py
"""

import numpy as np

from douc import ConfusionMatrix, compare_report, summarize

rng = np.random.default_rng(6)

gt = rng.integers(0, 3, (16, 16))

print("== a good predictor (10% label noise)")
good = gt.copy()
noise = rng.random(gt.shape) < 0.1
good[noise] = rng.integers(0, 3, int(noise.sum()))
cm_good = ConfusionMatrix(3).accumulate(good, gt)
print(f"mIoU {cm_good.miou()[1]:.3f}, pixel accuracy {cm_good.pixel_accuracy():.3f}")

print("\n== a poor predictor (50% label noise)")
bad = gt.copy()
noise = rng.random(gt.shape) < 0.5
bad[noise] = rng.integers(0, 3, int(noise.sum()))
cm_bad = ConfusionMatrix(3).accumulate(bad, gt)
print(f"mIoU {cm_bad.miou()[1]:.3f}, pixel accuracy {cm_bad.pixel_accuracy():.3f}")

print("\n== ignore label: pixels marked 255 never count")
gt_ignored = gt.copy()
gt_ignored[:4] = 255
cm = ConfusionMatrix(3).accumulate(good, gt_ignored)
print("counted pixels:", cm.total(), "of", gt.size)

print("\n== comparison report (deltas against the first run)")
names = ["road", "car", "sky"]
report, text = compare_report(
    [("full", summarize(cm_good, names)), ("ablation", summarize(cm_bad, names))]
)
print(text)
