"""Per-class IoU, seen/unseen mIoU, harmonic mIoU, and CSV exports.

Each feature sample counts as one unit of intersection/union mass, the
way a pixel does in segmentation scoring. Classes that never occur as
truth or prediction are absent: excluded from every mean.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class MetricsReport:
    per_class_iou: np.ndarray  # NaN marks absent classes
    miou_overall: Optional[float]
    miou_seen: Optional[float]
    miou_unseen: Optional[float]
    hiou: Optional[float]
    bias_gap: Optional[float]

    def to_dict(self):
        return {
            "per_class_iou": [None if np.isnan(v) else float(v) for v in self.per_class_iou],
            "miou_overall": self.miou_overall,
            "miou_seen": self.miou_seen,
            "miou_unseen": self.miou_unseen,
            "hiou": self.hiou,
            "bias_gap": self.bias_gap,
        }


def confusion(predictions, truths, n_classes):
    """Counts matrix indexed (true class, predicted class)."""
    preds = np.asarray(predictions, dtype=np.int64).ravel()
    truth = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truth.shape:
        raise ValueError(f"{preds.shape[0]} predictions for {truth.shape[0]} truths")
    for label, kind in ((preds, "prediction"), (truth, "truth")):
        if label.size and (label.min() < 0 or label.max() >= n_classes):
            raise ValueError(f"{kind} label out of range for {n_classes} classes")
    flat = truth * n_classes + preds
    counts = np.bincount(flat, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def iou_per_class(conf):
    """TP / (TP + FP + FN) per class; NaN where the class never occurs."""
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
    return iou


def hiou(miou_seen, miou_unseen):
    """Harmonic mean of the seen and unseen mIoU; 0 when either side is 0."""
    if miou_seen < 0 or miou_unseen < 0:
        raise ValueError("mIoU values must be >= 0")
    if miou_seen == 0 or miou_unseen == 0:
        return 0.0
    return 2.0 * miou_seen * miou_unseen / (miou_seen + miou_unseen)


def _present_mean(iou, ids):
    vals = iou[list(ids)] if len(ids) else np.array([])
    vals = vals[~np.isnan(vals)] if vals.size else vals
    return float(vals.mean()) if vals.size else None


def report(conf, unseen_ids) -> MetricsReport:
    """Aggregate a confusion matrix into the run-level metrics."""
    n = conf.shape[0]
    unseen_ids = set(int(i) for i in unseen_ids)
    seen_ids = [k for k in range(n) if k not in unseen_ids]
    iou = iou_per_class(conf)
    miou_overall = _present_mean(iou, range(n))
    miou_seen = _present_mean(iou, seen_ids)
    miou_unseen = _present_mean(iou, sorted(unseen_ids))
    if miou_seen is not None and miou_unseen is not None:
        h = hiou(miou_seen, miou_unseen)
        gap = miou_seen - miou_unseen
    else:
        h = None
        gap = None
    return MetricsReport(iou, miou_overall, miou_seen, miou_unseen, h, gap)


def _pct(value):
    return "" if value is None else f"{100.0 * value:.4f}"


METRICS_HEADER = [
    "run_id",
    "seed",
    "model_variant",
    "n_unseen",
    "miou_overall",
    "miou_seen",
    "miou_unseen",
    "hiou",
    "bias_gap",
]


def write_metrics_csv(path, rows):
    """One row per (run, seed); metric columns in percent."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["run_id"],
                    row["seed"],
                    row["model_variant"],
                    row["n_unseen"],
                    _pct(row["report"].miou_overall),
                    _pct(row["report"].miou_seen),
                    _pct(row["report"].miou_unseen),
                    _pct(row["report"].hiou),
                    _pct(row["report"].bias_gap),
                ]
            )


def write_per_class_csv(path, names, reports_by_seed):
    """Per-class IoU rows (percent), one per (seed, class)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "class_id", "class_name", "iou"])
        for seed, rep in reports_by_seed:
            for k, name in enumerate(names):
                v = rep.per_class_iou[k]
                writer.writerow([seed, k, name, "" if np.isnan(v) else f"{100.0 * v:.4f}"])
