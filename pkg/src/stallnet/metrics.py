"""Binary classification metrics: confusion counts, accuracy/precision/recall/F1, ROC-AUC."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgument, UndefinedMetric


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidArgument("confusion counts must be >= 0")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    cm: ConfusionMatrix
    threshold: float = 0.5
    undefined: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["cm"] = asdict(self.cm)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0 or s.size != y.size:
        raise InvalidArgument("scores and labels must be non-empty and of equal length")
    if not np.isin(y, (0, 1)).all():
        raise InvalidArgument("labels must be 0 or 1")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold=0.5):
    """Counts with prediction = score >= threshold."""
    s, y = _check(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def classification_metrics(cm):
    """``(accuracy, precision, recall, f1, undefined)``; zero denominators give 0 and a flag."""
    if cm.total == 0:
        raise InvalidArgument("confusion matrix is empty")
    flags = []
    acc = (cm.tp + cm.tn) / cm.total
    prec = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    rec = _ratio(cm.tp, cm.tp + cm.fn, "recall", flags)
    # 2PR/(P+R) == 2tp/(2tp+fp+fn), the latter avoids compounding rounding
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", flags)
    return acc, prec, rec, f1, flags


def roc_auc(scores, labels):
    """P(random positive outscores random negative), ties counted one half."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(s)  # average ranks handle ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """``(fpr, tpr, thresholds)`` sweeping every distinct score, highest first."""
    s, y = _check(scores, labels)
    n_pos = max(1, int(y.sum()))
    n_neg = max(1, int((1 - y).sum()))
    thresholds = np.unique(s)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        pred = s >= t
        tpr.append(float(np.sum(pred & (y == 1)) / n_pos))
        fpr.append(float(np.sum(pred & (y == 0)) / n_neg))
    return np.array(fpr), np.array(tpr), np.concatenate([[np.inf], thresholds])


def roc_csv(scores, labels):
    fpr, tpr, thr = roc_curve(scores, labels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for a, b, c in zip(thr, fpr, tpr):
        w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    return buf.getvalue()


def evaluate(scores, labels, threshold=0.5):
    cm = confusion(scores, labels, threshold)
    acc, prec, rec, f1, flags = classification_metrics(cm)
    try:
        auc = roc_auc(scores, labels)
    except UndefinedMetric:
        auc = None
        flags.append("auc")
    return EvalReport(acc, prec, rec, f1, auc, cm, threshold, flags)
