"""Agreement metrics between pseudo-label rasters and ground truth.

Cluster indices are arbitrary, so rasters are compared through a
confusion matrix followed by an optimal one-to-one cluster-to-class
assignment; mIoU and mAcc are then computed in the ground-truth class
space. Pixels valued 255 in either raster are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .interchange import IGNORE_LABEL


class EmptyConfusionError(ValueError):
    """No mutually non-ignored pixels were accumulated."""


@dataclass
class ConfusionMatrix:
    """counts[p][t] = pixels predicted p with ground truth t, both != 255."""

    counts: np.ndarray  # uint64, shape (n_pred, n_gt)

    @classmethod
    def zeros(cls, n_pred: int, n_gt: int) -> "ConfusionMatrix":
        if n_pred < 1 or n_gt < 1:
            raise ValueError("confusion matrix needs at least one class per side")
        return cls(np.zeros((n_pred, n_gt), dtype=np.uint64))

    @property
    def n_pred(self) -> int:
        return self.counts.shape[0]

    @property
    def n_gt(self) -> int:
        return self.counts.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        valid = (pred != IGNORE_LABEL) & (gt != IGNORE_LABEL)
        p = pred[valid].astype(np.int64)
        t = gt[valid].astype(np.int64)
        if p.size and (p.max() >= self.n_pred or t.max() >= self.n_gt):
            raise ValueError("label value outside the configured class counts")
        flat = np.bincount(p * self.n_gt + t, minlength=self.n_pred * self.n_gt)
        self.counts += flat.reshape(self.n_pred, self.n_gt).astype(np.uint64)

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError("cannot merge confusion matrices of different shapes")
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred: np.ndarray, gt: np.ndarray, n_pred: int, n_gt: int) -> ConfusionMatrix:
    cm = ConfusionMatrix.zeros(n_pred, n_gt)
    cm.add(pred, gt)
    return cm


def optimal_mapping(cm: ConfusionMatrix) -> dict[int, int | None]:
    """Injective predicted -> ground-truth assignment maximizing matched pixels.

    Exactly min(n_pred, n_gt) pairs are matched; surplus predicted
    classes map to None and count as errors everywhere. Rows are
    canonicalized by content before solving so that ties between
    equally good assignments break independently of how the caller
    happened to number its clusters.
    """
    order = sorted(
        range(cm.n_pred), key=lambda p: tuple(int(v) for v in cm.counts[p]), reverse=True
    )
    rows, cols = linear_sum_assignment(cm.counts[order].astype(np.float64), maximize=True)
    mapping: dict[int, int | None] = {p: None for p in range(cm.n_pred)}
    for r, t in zip(rows, cols):
        mapping[order[int(r)]] = int(t)
    return mapping


@dataclass
class MetricReport:
    miou: float
    macc: float
    per_class_iou: dict[int, float]
    per_class_acc: dict[int, float]
    mapping: dict[int, int | None]
    total_pixels: int


def miou_macc(cm: ConfusionMatrix, mapping: dict[int, int | None] | None = None) -> MetricReport:
    """Relabel through the mapping and score in ground-truth class space.

    IoU_c = TP/(TP+FP+FN); classes absent from both sides are excluded
    from the means, classes present but never matched score 0.
    """
    if cm.total == 0:
        raise EmptyConfusionError("confusion matrix holds no valid pixels")
    if mapping is None:
        mapping = optimal_mapping(cm)
    g = cm.n_gt
    counts = cm.counts.astype(np.float64)
    remapped = np.zeros((g, g))
    unmatched_by_gt = np.zeros(g)
    for p in range(cm.n_pred):
        t = mapping.get(p)
        if t is None:
            unmatched_by_gt += counts[p]
        else:
            remapped[t] += counts[p]
    ious: dict[int, float] = {}
    accs: dict[int, float] = {}
    for t in range(g):
        tp = remapped[t, t]
        fp = remapped[t].sum() - tp
        fn = remapped[:, t].sum() - tp + unmatched_by_gt[t]
        if tp + fp + fn > 0:
            ious[t] = tp / (tp + fp + fn)
        if tp + fn > 0:
            accs[t] = tp / (tp + fn)
    if not ious:
        raise EmptyConfusionError("no class present on either side")
    return MetricReport(
        miou=float(np.mean(list(ious.values()))),
        macc=float(np.mean(list(accs.values()))),
        per_class_iou=ious,
        per_class_acc=accs,
        mapping=mapping,
        total_pixels=cm.total,
    )


def cluster_purity(cm: ConfusionMatrix) -> float:
    """Fraction of pixels whose cluster's majority ground-truth class matches."""
    if cm.total == 0:
        raise EmptyConfusionError("confusion matrix holds no valid pixels")
    return float(cm.counts.max(axis=1).sum() / cm.total)


def write_report(report: MetricReport, path: str | Path) -> None:
    """Emit the per-class table plus a summary line as TSV."""
    inverse = {t: p for p, t in report.mapping.items() if t is not None}
    lines = ["class\tmatched_pred\tiou\tacc"]
    for t in sorted(set(report.per_class_iou) | set(report.per_class_acc)):
        pred = inverse.get(t)
        lines.append(
            "\t".join(
                (
                    str(t),
                    "-" if pred is None else str(pred),
                    f"{report.per_class_iou.get(t, float('nan')):.6f}",
                    f"{report.per_class_acc.get(t, float('nan')):.6f}",
                )
            )
        )
    lines.append(f"mean\t-\t{report.miou:.6f}\t{report.macc:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
