"""Segmentation quality metrics: pixel accuracy, Dice coefficient, IoU.

Dice and IoU are computed per class on hard label maps and reported as the
unweighted mean over classes, background included.  A class absent from both
prediction and truth scores 1 for that class (the 0/0 case is read as a
perfect vacuous match).  Per class the two overlap scores obey
iou = dice / (2 - dice).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError

CSV_BASE_COLUMNS = ("epoch", "loss", "AC", "DC", "IoU", "AC_val", "DC_val", "IoU_val")


def _check_pair(pred, truth, num_classes=None):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"label maps differ in shape: {pred.shape} vs {truth.shape}")
    if num_classes is not None:
        for name, arr in (("pred", pred), ("truth", truth)):
            if arr.min(initial=0) < 0 or arr.max(initial=0) >= num_classes:
                raise InvalidInputError(
                    f"{name} labels outside [0, {num_classes - 1}]"
                )
    return pred.ravel(), truth.ravel()


def accuracy(pred_labels, true_labels) -> float:
    """Fraction of pixels whose labels agree."""
    pred, truth = _check_pair(pred_labels, true_labels)
    return float(np.mean(pred == truth))


def _confusion(pred, truth, num_classes):
    joint = truth.astype(np.int64) * num_classes + pred.astype(np.int64)
    counts = np.bincount(joint, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)  # rows truth, cols pred


def dice_per_class(pred_labels, true_labels, num_classes) -> np.ndarray:
    pred, truth = _check_pair(pred_labels, true_labels, num_classes)
    conf = _confusion(pred, truth, num_classes)
    tp = np.diag(conf).astype(np.float64)
    sizes = conf.sum(axis=1) + conf.sum(axis=0)  # |T_k| + |P_k|
    out = np.ones(num_classes)
    present = sizes > 0
    out[present] = 2.0 * tp[present] / sizes[present]
    return out


def iou_per_class(pred_labels, true_labels, num_classes) -> np.ndarray:
    pred, truth = _check_pair(pred_labels, true_labels, num_classes)
    conf = _confusion(pred, truth, num_classes)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=1) + conf.sum(axis=0) - tp
    out = np.ones(num_classes)
    present = union > 0
    out[present] = tp[present] / union[present]
    return out


def dice(pred_labels, true_labels, num_classes) -> float:
    return float(dice_per_class(pred_labels, true_labels, num_classes).mean())


def iou(pred_labels, true_labels, num_classes) -> float:
    return float(iou_per_class(pred_labels, true_labels, num_classes).mean())


@dataclass
class MetricsRecord:
    """One epoch's scores; per-class entries are for the validation split."""

    epoch: int
    loss: float
    ac: float
    dc: float
    iou: float
    ac_val: float
    dc_val: float
    iou_val: float
    dc_val_per_class: list = field(default_factory=list)
    iou_val_per_class: list = field(default_factory=list)

    @staticmethod
    def csv_header(num_classes=0) -> str:
        columns = list(CSV_BASE_COLUMNS)
        columns += [f"DC_{k}" for k in range(num_classes)]
        columns += [f"IoU_{k}" for k in range(num_classes)]
        return ",".join(columns)

    def csv_row(self) -> str:
        values = [self.loss, self.ac, self.dc, self.iou,
                  self.ac_val, self.dc_val, self.iou_val]
        values += list(self.dc_val_per_class) + list(self.iou_val_per_class)
        # repr gives the shortest digits that round-trip, keeping files
        # byte-stable across runs
        return ",".join([str(self.epoch)] + [repr(float(v)) for v in values])
