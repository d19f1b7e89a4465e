"""Confusion matrices, per-class precision/recall/F1 and grouped reports."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, LengthMismatch, ZeroBaseline

GROUPS = ("minority", "majority", "overall")
METRICS = ("precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[t, p]``: samples of true class ``t`` predicted as ``p``."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, predicted_labels, K: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if len(t) != len(p):
        raise LengthMismatch(f"{len(t)} true labels vs {len(p)} predictions")
    for arr in (t, p):
        if len(arr) and (arr.min() < 0 or arr.max() >= K):
            raise LabelOutOfRange(f"labels must lie in [0, {K - 1}]")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _safe_div(num, den):
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _f1(p, r):
    return _safe_div(2 * p * r, p + r)


def class_metrics(cm: ConfusionMatrix) -> np.ndarray:
    """``(K, 3)`` array of precision, recall, F1 per class; 0/0 counts as 0."""
    c = cm.counts
    tp = np.diag(c)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, c.sum(axis=1))
    return np.column_stack([precision, recall, _f1(precision, recall)])


@dataclass(frozen=True)
class GroupReport:
    """Precision/recall/F1 for the minority, majority and overall class groups."""

    values: dict  # group -> metric -> float

    def __getitem__(self, key):
        group, metric = key
        return self.values[group][metric]

    def flat(self) -> list[float]:
        """The nine values, group-major (minority, majority, overall)."""
        return [self.values[g][m] for g in GROUPS for m in METRICS]

    def to_dict(self) -> dict:
        return {g: dict(self.values[g]) for g in GROUPS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GroupReport":
        return cls({g: {m: float(d[g][m]) for m in METRICS} for g in GROUPS})


def group_report(per_class, minority, average: str = "macro", cm: ConfusionMatrix | None = None) -> GroupReport:
    """Aggregate per-class metrics over the minority, majority and all classes.

    ``average="macro"`` takes the unweighted mean of each group's per-class
    values. ``average="micro"`` pools TP/FP/FN inside each group and needs
    ``cm``.
    """
    per_class = np.asarray(per_class, dtype=np.float64)
    K = len(per_class)
    minority = sorted({int(c) for c in minority})
    if not minority or len(minority) >= K or min(minority) < 0 or max(minority) >= K:
        raise ValueError("minority must be a non-empty proper subset of the classes")
    majority = [c for c in range(K) if c not in minority]
    members = {"minority": minority, "majority": majority, "overall": list(range(K))}
    values = {}
    for g, cls in members.items():
        if average == "macro":
            mean = per_class[cls].mean(axis=0)
            values[g] = dict(zip(METRICS, map(float, mean)))
        elif average == "micro":
            if cm is None:
                raise ValueError("micro averaging needs the confusion matrix")
            c = cm.counts
            tp = c[cls, cls].sum()
            p = float(_safe_div(tp, c[:, cls].sum()))
            r = float(_safe_div(tp, c[cls, :].sum()))
            values[g] = {"precision": p, "recall": r, "f1": float(_f1(p, r))}
        else:
            raise ValueError(f"unknown average {average!r}")
    return GroupReport(values)


def evaluate(true_labels, predicted_labels, K: int, minority, average: str = "macro") -> GroupReport:
    cm = confusion(true_labels, predicted_labels, K)
    return group_report(class_metrics(cm), minority, average, cm)


def relative_change(value: float, baseline: float) -> float:
    """``(value - baseline) / baseline``."""
    if baseline == 0:
        raise ZeroBaseline("relative change is undefined for a zero baseline")
    return (value - baseline) / baseline


def relative_report(report: GroupReport, baseline: GroupReport) -> dict:
    """Relative change per group and metric; undefined cells are ``None``."""
    out = {}
    for g in GROUPS:
        out[g] = {}
        for m in METRICS:
            try:
                out[g][m] = relative_change(report[g, m], baseline[g, m])
            except ZeroBaseline:
                out[g][m] = None
    return out
