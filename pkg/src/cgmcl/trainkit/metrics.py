"""Confusion-matrix metrics and trapezoidal ROC AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cgmcl.errors import DataError

METRIC_NAMES = ("acc", "sen", "spe", "ppv", "npv", "auc")


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


@dataclass
class MetricsReport:
    acc: float
    sen: float
    spe: float
    ppv: float
    npv: float
    auc: float
    confusion: np.ndarray
    std: dict[str, float] = field(default_factory=dict)
    runs: int = 1

    def row(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with true classes on rows and predictions on columns."""
    t = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    if t.shape != p.shape:
        raise DataError(f"label/prediction length mismatch: {t.shape} vs {p.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def binary_rates(tp: int, fn: int, tn: int, fp: int) -> dict[str, float]:
    return {
        "acc": _ratio(tp + tn, tp + tn + fp + fn),
        "sen": _ratio(tp, tp + fn),
        "spe": _ratio(tn, tn + fp),
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
    }


def rates_from_confusion(cm: np.ndarray) -> dict[str, float]:
    """Binary: class 1 is positive. Multi-class: macro one-vs-rest, acc = trace/total."""
    cm = np.asarray(cm)
    if cm.shape == (2, 2):
        tn, fp, fn, tp = cm.ravel()
        return binary_rates(int(tp), int(fn), int(tn), int(fp))
    total = cm.sum()
    per_class = []
    for k in range(cm.shape[0]):
        tp = cm[k, k]
        fn = cm[k].sum() - tp
        fp = cm[:, k].sum() - tp
        tn = total - tp - fn - fp
        per_class.append(binary_rates(int(tp), int(fn), int(tn), int(fp)))
    out = {name: float(np.mean([r[name] for r in per_class])) for name in ("sen", "spe", "ppv", "npv")}
    out["acc"] = _ratio(np.trace(cm), total)
    return out


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve; tied scores form one diagonal step."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_score(y_true, probs: np.ndarray) -> float:
    """Positive-class AUC for two classes, macro one-vs-rest otherwise."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y_true, dtype=int)
    if probs.shape[1] == 2:
        return roc_auc(y == 1, probs[:, 1])
    per = [roc_auc(y == k, probs[:, k]) for k in range(probs.shape[1])]
    per = [a for a in per if not np.isnan(a)]
    return float(np.mean(per)) if per else float("nan")


def metrics_from_probs(y_true, probs: np.ndarray) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y_true, dtype=int)
    if y.size == 0:
        raise DataError("cannot compute metrics on an empty set")
    cm = confusion_matrix(y, probs.argmax(axis=1), probs.shape[1])
    return MetricsReport(**rates_from_confusion(cm), auc=auc_score(y, probs), confusion=cm)


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean and (population) standard deviation over repeated runs."""
    if not reports:
        raise DataError("nothing to aggregate")
    mean = {}
    std = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports])
        mean[name] = float(np.mean(vals))
        std[name] = float(np.std(vals))
    conf = np.sum([r.confusion for r in reports], axis=0)
    return MetricsReport(**mean, confusion=conf, std=std, runs=len(reports))
