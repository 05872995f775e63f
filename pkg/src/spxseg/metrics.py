"""Segmentation quality metrics from a dense confusion matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class EvalReport:
    pixel_acc: float
    mean_acc: float
    mean_iu: float
    per_class_iu: list[float]  # nan for classes absent from both GT and prediction
    confusion: np.ndarray  # (K, K), rows = ground truth, cols = prediction

    def to_json(self) -> str:
        return json.dumps(
            {
                "pixel_acc": self.pixel_acc,
                "mean_acc": self.mean_acc,
                "mean_iu": self.mean_iu,
                "per_class_iu": [None if np.isnan(v) else v for v in self.per_class_iu],
                "confusion": self.confusion.tolist(),
            },
            indent=2,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def confusion_matrix(
    prediction: np.ndarray,
    ground_truth: np.ndarray,
    class_count: int,
    ignore_label: int | None = None,
) -> np.ndarray:
    """Count (gt, pred) pairs over valid pixels; rows sum to GT class sizes."""
    prediction = np.asarray(prediction)
    ground_truth = np.asarray(ground_truth)
    if prediction.shape != ground_truth.shape:
        raise ValueError(
            f"shape mismatch: prediction {prediction.shape} vs ground truth {ground_truth.shape}"
        )
    valid = np.ones(ground_truth.shape, dtype=bool)
    if ignore_label is not None:
        valid = ground_truth != ignore_label
    gt = ground_truth[valid].astype(np.int64)
    pred = prediction[valid].astype(np.int64)
    if gt.size and (gt.min() < 0 or gt.max() >= class_count):
        raise ValueError("ground-truth labels outside [0, class_count)")
    if pred.size and (pred.min() < 0 or pred.max() >= class_count):
        raise ValueError("predicted labels outside [0, class_count)")
    counts = np.bincount(gt * class_count + pred, minlength=class_count * class_count)
    return counts.reshape(class_count, class_count)


def report_from_confusion(confusion: np.ndarray) -> EvalReport:
    """Pixel accuracy, mean per-class accuracy and mean IU from counts.

    Means run over classes present in the ground truth; a class absent
    from both ground truth and prediction has no defined IU and is
    excluded (stored as nan).
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise ValueError("no valid pixels to evaluate")
    tp = np.diag(confusion).astype(np.float64)
    gt_count = confusion.sum(axis=1).astype(np.float64)
    pred_count = confusion.sum(axis=0).astype(np.float64)
    union = gt_count + pred_count - tp

    in_gt = gt_count > 0
    present = union > 0  # in GT or in prediction
    iu = np.full(len(confusion), np.nan)
    iu[present] = tp[present] / union[present]

    return EvalReport(
        pixel_acc=float(tp.sum() / total),
        mean_acc=float((tp[in_gt] / gt_count[in_gt]).mean()),
        mean_iu=float(iu[in_gt].mean()),
        per_class_iu=iu.tolist(),
        confusion=confusion,
    )


def evaluate(
    prediction: np.ndarray,
    ground_truth: np.ndarray,
    class_count: int,
    ignore_label: int | None = None,
) -> EvalReport:
    """Score one dense prediction against its ground truth."""
    return report_from_confusion(
        confusion_matrix(prediction, ground_truth, class_count, ignore_label)
    )
