"""Evaluation metrics for saliency maps and defect classification."""

from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class MetricReport:
    mae: float
    iou: float
    or_ratio: float         # |P n G| / |P u G| on binarized maps
    or_over_gt: float       # alternative reading: |P n G| / |G|
    precision: float
    recall: float
    f_measure: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        return "\n".join(f"{k}={v}" for k, v in self.to_dict().items())


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def segmentation_metrics(pred, target, threshold=0.5):
    """Pixel metrics for a probability map against a binary mask.

    MAE is computed pre-threshold; all count-based metrics use maps
    binarized at ``threshold``.  An empty prediction scores precision 0
    by convention.
    """
    p = _as_array(pred).astype(np.float64)
    g = _as_array(target).astype(np.float64)
    if p.size == 0 or g.size == 0:
        raise ShapeError("empty tensors")
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {g.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    mae = float(np.abs(p - g).mean())
    pb = p > threshold
    gb = g > 0.5
    tp = int(np.count_nonzero(pb & gb))
    fp = int(np.count_nonzero(pb & ~gb))
    fn = int(np.count_nonzero(~pb & gb))
    tn = int(np.count_nonzero(~pb & ~gb))
    union = tp + fp + fn
    iou = tp / union if union else 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f_measure = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    or_over_gt = tp / (tp + fn) if tp + fn else 1.0
    return MetricReport(mae=mae, iou=iou, or_ratio=iou, or_over_gt=or_over_gt,
                        precision=precision, recall=recall, f_measure=f_measure,
                        tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_text(self):
        d = self.to_dict()
        d.pop("per_class")
        return "\n".join(f"{k}={v}" for k, v in d.items())


def classification_metrics(logits, labels):
    """Argmax decision (ties break to the lowest index) with
    macro-averaged precision/recall/F1."""
    z = _as_array(logits)
    z = z.reshape(z.shape[0], -1)
    labels = np.asarray(labels)
    if z.shape[0] != labels.shape[0]:
        raise ShapeError(f"{z.shape[0]} logit rows vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= z.shape[1]:
        raise ShapeError(f"label {labels.max()} out of range for {z.shape[1]} classes")
    pred = z.argmax(axis=1)
    accuracy = float((pred == labels).mean())
    per_class = []
    for k in range(z.shape[1]):
        tp = int(np.count_nonzero((pred == k) & (labels == k)))
        fp = int(np.count_nonzero((pred == k) & (labels != k)))
        fn = int(np.count_nonzero((pred != k) & (labels == k)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class.append({"class": k, "precision": p, "recall": r, "f1": f1})
    macro = lambda key: float(np.mean([c[key] for c in per_class]))
    return ClassificationReport(accuracy=accuracy, precision=macro("precision"),
                                recall=macro("recall"), f1=macro("f1"),
                                per_class=per_class)


def aggregate_reports(reports):
    """Mean of per-image segmentation reports (counts are summed)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))
    total = lambda key: int(np.sum([getattr(r, key) for r in reports]))
    return MetricReport(
        mae=mean("mae"), iou=mean("iou"), or_ratio=mean("or_ratio"),
        or_over_gt=mean("or_over_gt"), precision=mean("precision"),
        recall=mean("recall"), f_measure=mean("f_measure"),
        tp=total("tp"), fp=total("fp"), fn=total("fn"), tn=total("tn"))
