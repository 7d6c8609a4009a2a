"""Confusion-matrix construction and the derived classification metrics:
per-class count splits, accuracy, predictive values, rates, F-score, MCC,
overall/macro accuracy, Cohen's kappa, and one-vs-rest ROC/AUC.

Matrix orientation: rows are the TRUE class, columns the PREDICTED class, so
false negatives are counted along rows and false positives along columns.
Ratios whose denominator is zero come back as 0.0 with a degeneracy flag
instead of NaN, so reports never propagate non-numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts, counts[i][j] = #{true == labels[i] and pred == labels[j]}."""

    counts: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(self.labels))
        k = len(self.labels)
        if counts.shape != (k, k):
            raise ValueError("counts must be K x K for K labels")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.labels != other.labels:
            raise ValueError("label sets differ")
        return ConfusionMatrix(self.counts + other.counts, self.labels)


def confusion(y_true: Sequence[str], y_pred: Sequence[str],
              labels: Sequence[str]) -> ConfusionMatrix:
    """Tally a confusion matrix over the given label order."""
    if len(y_true) != len(y_pred):
        raise ValueError("label vectors must have equal length")
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if t not in index or p not in index:
            raise ValueError(f"label {t if t not in index else p!r} not in label set")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, tuple(labels))


def _ratio(num: float, den: float, name: str, flags: set) -> float:
    if den == 0:
        flags.add(name)
        return 0.0
    return num / den


@dataclass(frozen=True)
class ClassMetrics:
    """One-vs-rest count split and derived ratios for a single class."""

    label: str
    tp: int
    tn: int
    fp: int
    fne: int
    accuracy: float
    ppv: float
    npv: float
    tpr: float
    tnr: float
    f_score: float
    mcc: float
    degenerate: frozenset[str] = frozenset()


def class_metrics(cm: ConfusionMatrix, i: int) -> ClassMetrics:
    """Derive the per-class metrics for class index ``i`` from the matrix.

    tp is the diagonal cell; fne the rest of the row; fp the rest of the
    column; tn everything else. Undefined 0/0 ratios come back as 0.0 and the
    metric name lands in ``degenerate``.
    """
    counts = cm.counts
    n = cm.n
    tp = int(counts[i, i])
    fne = int(counts[i, :].sum() - tp)
    fp = int(counts[:, i].sum() - tp)
    tn = n - tp - fne - fp
    flags: set[str] = set()
    accuracy = _ratio(tp + tn, n, "accuracy", flags)
    ppv = _ratio(tp, tp + fp, "ppv", flags)
    npv = _ratio(tn, tn + fne, "npv", flags)
    tpr = _ratio(tp, tp + fne, "tpr", flags)
    tnr = _ratio(tn, tn + fp, "tnr", flags)
    f_score = _ratio(2 * ppv * tpr, ppv + tpr, "f_score", flags)
    denom = (tp + fp) * (tp + fne) * (tn + fp) * (tn + fne)
    mcc = _ratio(tp * tn - fp * fne, float(np.sqrt(denom)), "mcc", flags)
    return ClassMetrics(label=cm.labels[i], tp=tp, tn=tn, fp=fp, fne=fne,
                        accuracy=accuracy, ppv=ppv, npv=npv, tpr=tpr, tnr=tnr,
                        f_score=f_score, mcc=mcc, degenerate=frozenset(flags))


def metrics_from_counts(label: str, tp: int, tn: int, fp: int, fne: int) -> ClassMetrics:
    """Same derivations, but from an explicit count split (n = tp+tn+fp+fne)."""
    n = tp + tn + fp + fne
    flags: set[str] = set()
    accuracy = _ratio(tp + tn, n, "accuracy", flags)
    ppv = _ratio(tp, tp + fp, "ppv", flags)
    npv = _ratio(tn, tn + fne, "npv", flags)
    tpr = _ratio(tp, tp + fne, "tpr", flags)
    tnr = _ratio(tn, tn + fp, "tnr", flags)
    f_score = _ratio(2 * ppv * tpr, ppv + tpr, "f_score", flags)
    denom = (tp + fp) * (tp + fne) * (tn + fp) * (tn + fne)
    mcc = _ratio(tp * tn - fp * fne, float(np.sqrt(denom)), "mcc", flags)
    return ClassMetrics(label=label, tp=tp, tn=tn, fp=fp, fne=fne,
                        accuracy=accuracy, ppv=ppv, npv=npv, tpr=tpr, tnr=tnr,
                        f_score=f_score, mcc=mcc, degenerate=frozenset(flags))


@dataclass(frozen=True)
class OverallMetrics:
    accuracy: float
    macro_accuracy: float
    kappa: float
    degenerate: frozenset[str] = frozenset()


def overall_metrics(cm: ConfusionMatrix) -> OverallMetrics:
    """Overall accuracy (trace/n), macro accuracy (mean per-class accuracy)
    and Cohen's kappa with chance agreement from row/column marginals."""
    n = cm.n
    if n == 0:
        raise ValueError("empty confusion matrix")
    flags: set[str] = set()
    accuracy = float(np.trace(cm.counts)) / n
    macro = float(np.mean([class_metrics(cm, i).accuracy for i in range(len(cm.labels))]))
    p_o = accuracy
    p_e = float(np.dot(cm.row_totals(), cm.col_totals())) / (n * n)
    if p_e >= 1.0:
        flags.add("kappa")
        kappa = 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return OverallMetrics(accuracy=accuracy, macro_accuracy=macro, kappa=kappa,
                          degenerate=frozenset(flags))


# --------------------------------------------------------------------------
# ROC / AUC
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RocResult:
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    fpr_at_operating_point: float     # at the Youden-optimal curve point


def roc_auc(scores: Sequence[float], y_true: Sequence[str], positive: str) -> RocResult:
    """One-vs-rest ROC by threshold sweep; AUC by trapezoid rule.

    Ties in the scores are averaged, making the AUC equal to the normalized
    Mann-Whitney U statistic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.array([label == positive for label in y_true])
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    scores_sorted = scores[order]
    truth_sorted = truth[order]
    tps = np.cumsum(truth_sorted)
    fps = np.cumsum(~truth_sorted)
    # collapse tied thresholds to their last occurrence
    distinct = np.nonzero(np.diff(scores_sorted, append=-np.inf))[0]
    tpr = np.concatenate([[0.0], tps[distinct] / n_pos])
    fpr = np.concatenate([[0.0], fps[distinct] / n_neg])
    thresholds = np.concatenate([[np.inf], scores_sorted[distinct]])
    try:
        auc = float(np.trapezoid(tpr, fpr))
    except AttributeError:          # numpy < 2
        auc = float(np.trapz(tpr, fpr))
    youden = int(np.argmax(tpr - fpr))
    return RocResult(auc=auc, fpr=fpr, tpr=tpr, thresholds=thresholds,
                     fpr_at_operating_point=float(fpr[youden]))


# --------------------------------------------------------------------------
# Report rendering
# --------------------------------------------------------------------------

def report_json(cm: ConfusionMatrix) -> str:
    per_class = [class_metrics(cm, i) for i in range(len(cm.labels))]
    overall = overall_metrics(cm)
    doc = {
        "labels": list(cm.labels),
        "counts": cm.counts.tolist(),
        "overall": {
            "accuracy": overall.accuracy,
            "macro_accuracy": overall.macro_accuracy,
            "kappa": overall.kappa,
            "degenerate": sorted(overall.degenerate),
        },
        "per_class": [
            {
                "label": m.label, "tp": m.tp, "tn": m.tn, "fp": m.fp, "fne": m.fne,
                "accuracy": m.accuracy, "ppv": m.ppv, "npv": m.npv, "tpr": m.tpr,
                "tnr": m.tnr, "f_score": m.f_score, "mcc": m.mcc,
                "degenerate": sorted(m.degenerate),
            }
            for m in per_class
        ],
    }
    return json.dumps(doc, indent=2)


def report_text(cm: ConfusionMatrix) -> str:
    """Aligned-column tables: the count matrix, then per-class metrics."""
    labels = cm.labels
    width = max(6, max(len(lb) for lb in labels) + 1)
    lines = []
    header = "true\\pred".ljust(10) + "".join(lb.rjust(width) for lb in labels)
    lines.append(header)
    for i, lb in enumerate(labels):
        lines.append(lb.ljust(10) + "".join(str(int(v)).rjust(width) for v in cm.counts[i]))
    overall = overall_metrics(cm)
    lines.append("")
    lines.append(f"overall accuracy {overall.accuracy:.3f}   "
                 f"macro accuracy {overall.macro_accuracy:.3f}   kappa {overall.kappa:.4f}")
    lines.append("")
    rows = ["tp", "tn", "fp", "fne", "accuracy", "ppv", "tpr", "tnr", "npv", "f_score", "mcc"]
    per_class = [class_metrics(cm, i) for i in range(len(labels))]
    lines.append("metric".ljust(10) + "".join(lb.rjust(width) for lb in labels))
    for name in rows:
        cells = []
        for m in per_class:
            v = getattr(m, name)
            cells.append((str(v) if isinstance(v, int) else f"{v:.3f}").rjust(width))
        lines.append(name.ljust(10) + "".join(cells))
    return "\n".join(lines)
