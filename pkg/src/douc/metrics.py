"""Segmentation metrics: confusion matrix, per-class IoU, mIoU, reports.

Rows of the confusion matrix are ground-truth classes, columns predictions.
Pixels whose ground truth equals ``ignore_label`` are skipped.  Classes with
zero union (absent from both prediction and ground truth) are excluded from
the mean IoU.  Per-image matrices may be accumulated concurrently and merged
by addition; merging is associative and commutative.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ShapeError

DEFAULT_IGNORE_LABEL = 255


class ConfusionMatrix:
    def __init__(self, num_classes: int, ignore_label: int = DEFAULT_IGNORE_LABEL):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        """Add one prediction/ground-truth pair (any matching shapes)."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
        pred = np.rint(pred).astype(np.int64).reshape(-1)
        gt = np.rint(gt).astype(np.int64).reshape(-1)
        keep = gt != self.ignore_label
        gt = gt[keep]
        pred = pred[keep]
        c = self.num_classes
        if gt.size:
            if gt.min() < 0 or gt.max() >= c:
                raise ValueError(f"ground-truth class outside [0, {c}) and not ignored")
            if pred.min() < 0 or pred.max() >= c:
                raise ValueError(f"predicted class outside [0, {c})")
            binned = np.bincount(gt * c + pred, minlength=c * c)
            self.counts += binned.reshape(c, c)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        total = self.total()
        if total == 0:
            return float("nan")
        return float(np.diag(self.counts).sum() / total)

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN marks classes with zero union."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(union > 0, tp / union, np.nan)
        return iou

    def miou(self) -> tuple[np.ndarray, float]:
        """Per-class IoU vector and the mean over classes with nonzero union."""
        per_class = self.per_class_iou()
        valid = ~np.isnan(per_class)
        mean = float(per_class[valid].mean()) if valid.any() else float("nan")
        return per_class, mean


def summarize(cm: ConfusionMatrix, class_names=None) -> dict:
    """JSON-ready metrics for one run."""
    per_class, mean = cm.miou()
    names = class_names or [str(i) for i in range(cm.num_classes)]
    return {
        "miou": mean,
        "pixel_accuracy": cm.pixel_accuracy(),
        "per_class_iou": {
            names[i]: (None if np.isnan(per_class[i]) else float(per_class[i]))
            for i in range(cm.num_classes)
        },
        "pixels": cm.total(),
    }


def compare_report(runs: list[tuple[str, dict]]) -> tuple[dict, str]:
    """Tabulate several runs' metrics with deltas against the first run.

    Returns a JSON-ready dict and an aligned text table.  Rows keep the given
    run order; class columns are sorted; output is deterministic.
    """
    if not runs:
        raise ValueError("compare_report needs at least one run")
    base_name, base = runs[0]
    classes = sorted(base["per_class_iou"])
    for name, metrics in runs[1:]:
        if sorted(metrics["per_class_iou"]) != classes:
            raise ShapeError(f"run '{name}' has a different class set than '{base_name}'")

    report = {"baseline": base_name, "classes": classes, "runs": []}
    for name, metrics in runs:
        entry = {
            "name": name,
            "miou": metrics["miou"],
            "miou_delta": metrics["miou"] - base["miou"],
            "pixel_accuracy": metrics["pixel_accuracy"],
            "per_class_iou": {c: metrics["per_class_iou"][c] for c in classes},
            "per_class_delta": {
                c: (
                    None
                    if metrics["per_class_iou"][c] is None or base["per_class_iou"][c] is None
                    else metrics["per_class_iou"][c] - base["per_class_iou"][c]
                )
                for c in classes
            },
        }
        report["runs"].append(entry)

    name_w = max(len("run"), max(len(name) for name, _ in runs))
    header = f"{'run':<{name_w}}  {'mIoU':>8}  {'dmIoU':>8}  {'pixacc':>8}"
    lines = [header, "-" * len(header)]
    for entry in report["runs"]:
        lines.append(
            f"{entry['name']:<{name_w}}  {entry['miou']:>8.4f}  "
            f"{entry['miou_delta']:>+8.4f}  {entry['pixel_accuracy']:>8.4f}"
        )
    for c in classes:
        row = f"  class {c}: " + "  ".join(
            f"{entry['name']}={_fmt(entry['per_class_iou'][c])}"
            f"({_fmt(entry['per_class_delta'][c], signed=True)})"
            for entry in report["runs"]
        )
        lines.append(row)
    return report, "\n".join(lines)


def _fmt(value, signed=False) -> str:
    if value is None:
        return "n/a"
    return f"{value:+.4f}" if signed else f"{value:.4f}"


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
