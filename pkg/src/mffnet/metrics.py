"""Confusion-matrix metrics and fixed-width reporting (fake = label 1)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import FeatureSet
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    name: str
    accuracy: float
    fake: ClassMetrics
    real: ClassMetrics
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list[float]:
        return [self.accuracy, self.fake.precision, self.fake.recall, self.fake.f1,
                self.real.precision, self.real.recall, self.real.f1]


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _class_metrics(tp: int, fp: int, fn: int) -> ClassMetrics:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return ClassMetrics(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


def metrics_from_predictions(labels, predicted, name: str = "MFF-Net", threshold: float = 0.5,
                             positive: int = 1) -> MetricsReport:
    """``predicted`` holds hard labels; ``positive`` is the label treated as fake."""
    labels = np.asarray(labels).astype(np.int64)
    predicted = np.asarray(predicted).astype(np.int64)
    if labels.shape != predicted.shape or labels.size == 0:
        raise ValueError("need equally sized, non-empty label and prediction arrays")
    is_pos = labels == positive
    pred_pos = predicted == positive
    tp = int(np.sum(is_pos & pred_pos))
    fp = int(np.sum(~is_pos & pred_pos))
    fn = int(np.sum(is_pos & ~pred_pos))
    tn = int(np.sum(~is_pos & ~pred_pos))
    return MetricsReport(name, _ratio(tp + tn, labels.size), _class_metrics(tp, fp, fn),
                         _class_metrics(tn, fn, fp), tp, fp, tn, fn, threshold)


def predict_proba(model, data: FeatureSet, batch_size: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for lo in range(0, len(data), batch_size):
            sl = slice(lo, lo + batch_size)
            y, _ = model(Tensor(data.R_T[sl]), Tensor(data.R_I[sl]), Tensor(data.C_T[sl]),
                         Tensor(data.C_I[sl]), strict=False)
            out.append(y.data)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, data: FeatureSet, threshold: float = 0.5, name: str = "MFF-Net") -> MetricsReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = predict_proba(model, data)
    return metrics_from_predictions(data.labels, (probs >= threshold).astype(np.int64), name, threshold)


HEADER = ("Method", "Accuracy", "Precision", "Recall", "F1", "Precision", "Recall", "F1")


def render_report(reports) -> str:
    """Fixed-width table: accuracy, then fake-news and real-news P/R/F1 blocks."""
    reports = list(reports)
    if not reports:
        raise ValueError("render_report needs at least one report")
    name_w = max(len(HEADER[0]), *(len(r.name) for r in reports))
    col = 9
    group = f"{'':<{name_w}}  {'':>{col}}  " + f"{'Fake news':^{3 * col + 2}}  " + f"{'Real news':^{3 * col + 2}}"
    head = f"{HEADER[0]:<{name_w}}  " + "  ".join(f"{h:>{col}}" for h in HEADER[1:])
    lines = [group.rstrip(), head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.name:<{name_w}}  " + "  ".join(f"{v:>{col}.3f}" for v in r.row()))
    return "\n".join(lines)


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)
