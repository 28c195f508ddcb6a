"""Segmentation metrics over the 4-class closed set.

Macro metrics (MIoU, F1, E1) average over classes present in ground truth
or prediction; classes absent from both are excluded so empty-region crops
do not produce 0/0 terms.  E1 is the per-class one-vs-rest disagreement
rate (FP+FN over all pixels), macro-averaged.
"""

from __future__ import annotations

import numpy as np

N_CLASSES = 4


def confusion_matrix(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """4x4 counts; entry (g, p) = pixels of ground truth g predicted p."""
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: prediction {y_hat.shape} vs labels {y.shape}")
    joint = (y.reshape(-1) * N_CLASSES + y_hat.reshape(-1)).astype(np.int64)
    if joint.min() < 0 or joint.max() >= N_CLASSES * N_CLASSES:
        raise ValueError("label values outside 0..3")
    return np.bincount(joint, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)


def metrics_from_confusion(conf: np.ndarray) -> dict:
    total = conf.sum()
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)
    fp = pred_count - tp
    fn = gt_count - tp
    union = gt_count + pred_count - tp
    present = union > 0

    per_class = {}
    for c in range(N_CLASSES):
        if not present[c]:
            continue
        denom_f1 = 2 * tp[c] + fp[c] + fn[c]
        per_class[c] = {
            "iou": tp[c] / union[c],
            "f1": (2 * tp[c] / denom_f1) if denom_f1 > 0 else 0.0,
            "e1": (fp[c] + fn[c]) / total,
        }
    ious = [v["iou"] for v in per_class.values()]
    return {
        "miou": float(np.mean(ious)),
        "f1": float(np.mean([v["f1"] for v in per_class.values()])),
        "e1": float(np.mean([v["e1"] for v in per_class.values()])),
        "acc": float(tp.sum() / total),
        "per_class": per_class,
    }


def metrics(y_hat: np.ndarray, y: np.ndarray) -> dict:
    """{miou, e1, f1, acc, per_class} for one predicted/true label map pair."""
    return metrics_from_confusion(confusion_matrix(y_hat, y))


def miou_from_confusion(conf: np.ndarray) -> float:
    return metrics_from_confusion(conf)["miou"]
