"""Confusion-matrix scores, reliability coefficients, ROC, and reports.

Everything here is a pure function of its inputs. Zero denominators
follow the common reporting convention and yield 0 rather than NaN, so
rendered tables never contain missing cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, LabelError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise DataError(
                f"confusion counts shape {self.counts.shape} does not match "
                f"{c} class names"
            )
        if np.any(self.counts < 0):
            raise DataError("confusion counts must be nonnegative")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(y_true, y_pred, n_classes: int, class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a C x C matrix."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise DataError(f"label arrays disagree: {y_true.shape} vs {y_pred.shape}")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelError(f"{name} contains labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    if class_names is None:
        class_names = tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def binary_counts(cm: ConfusionMatrix, class_id: int) -> tuple[int, int, int, int]:
    """One-vs-rest (TP, FP, FN, TN) for a class."""
    if not 0 <= class_id < cm.n_classes:
        raise LabelError(f"class id {class_id} outside [0, {cm.n_classes})")
    tp = int(cm.counts[class_id, class_id])
    fp = int(cm.counts[:, class_id].sum()) - tp
    fn = int(cm.counts[class_id, :].sum()) - tp
    tn = cm.total - tp - fp - fn
    return tp, fp, fn, tn


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def eq_metrics(cm: ConfusionMatrix, class_id: int) -> tuple[float, float, float, float]:
    """One-vs-rest (accuracy, recall, precision, f1) for a class.

    accuracy = (TP+TN)/N, recall = TP/(TP+FN), precision = TP/(TP+FP),
    f1 = 2PR/(P+R); zero denominators yield 0.
    """
    tp, fp, fn, tn = binary_counts(cm, class_id)
    accuracy = _ratio(tp + tn, tp + fp + fn + tn)
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return accuracy, recall, precision, f1


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement over the full matrix.

    kappa = (p_o - p_e) / (1 - p_e). A degenerate matrix with p_e == 1
    returns 1 for perfect agreement and 0 otherwise.
    """
    n = cm.total
    if n < 1:
        raise DataError("cohen_kappa needs a non-empty matrix")
    p_o = float(np.trace(cm.counts)) / n
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    p_e = float(rows @ cols) / (n * n)
    if p_e >= 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def _collapse(cm: ConfusionMatrix, class_id: int) -> ConfusionMatrix:
    tp, fp, fn, tn = binary_counts(cm, class_id)
    return ConfusionMatrix(
        counts=np.array([[tp, fn], [fp, tn]], dtype=np.int64),
        class_names=(cm.class_names[class_id], "rest"),
    )


def cohen_kappa_ovr(cm: ConfusionMatrix, class_id: int) -> float:
    """Kappa of the one-vs-rest 2x2 collapse of one class."""
    return cohen_kappa(_collapse(cm, class_id))


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (covariance form over C x C)."""
    n = cm.total
    if n < 1:
        raise DataError("mcc needs a non-empty matrix")
    counts = cm.counts.astype(np.float64)
    correct = float(np.trace(counts))
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    num = correct * n - float(rows @ cols)
    den = math.sqrt(n * n - float(cols @ cols)) * math.sqrt(n * n - float(rows @ rows))
    return num / den if den > 0 else 0.0


def mcc_ovr(cm: ConfusionMatrix, class_id: int) -> float:
    """Binary MCC of one class against the rest; zero denominator -> 0."""
    tp, fp, fn, tn = binary_counts(cm, class_id)
    den = math.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return (tp * tn - fp * fn) / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

@dataclass
class RocCurve:
    """One-vs-rest operating points at every distinct score threshold."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray   # aligned with fpr/tpr; first point uses +inf
    auc: float


def roc_curve(scores, truths) -> RocCurve:
    """Operating characteristic from scores and binary truths.

    Thresholds walk the distinct score values in descending order; tied
    scores collapse into a single point. The curve starts at (0,0) and
    ends at (1,1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    if scores.shape != truths.shape or scores.ndim != 1:
        raise DataError(f"scores {scores.shape} and truths {truths.shape} must be 1-D and equal")
    truths = truths.astype(bool)
    n_pos = int(truths.sum())
    n_neg = len(truths) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError(
            f"ROC undefined: need both classes, got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truths = truths[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    boundaries = np.concatenate([distinct, [len(scores) - 1]])
    tp = np.cumsum(sorted_truths)[boundaries]
    fp = boundaries + 1 - tp
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    thresholds = np.concatenate([[np.inf], sorted_scores[boundaries]])
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=float(np.trapezoid(tpr, fpr)))


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under an existing curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def roc_per_class(probs: np.ndarray, labels, class_names: Optional[Sequence[str]] = None):
    """One-vs-rest curve per class plus a macro average.

    Classes missing either positives or negatives in ``labels`` are
    omitted. The macro curve averages per-class TPR on the union FPR
    grid; its AUC is the mean of the per-class AUCs.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise DataError(f"probs {probs.shape} and labels {labels.shape} disagree")
    curves: dict[str, RocCurve] = {}
    if class_names is None:
        class_names = tuple(str(i) for i in range(probs.shape[1]))
    for c in range(probs.shape[1]):
        truth = labels == c
        if truth.all() or not truth.any():
            continue
        curves[class_names[c]] = roc_curve(probs[:, c], truth)
    if not curves:
        raise DataError("no class had both positives and negatives")
    grid = np.unique(np.concatenate([cv.fpr for cv in curves.values()]))
    mean_tpr = np.mean(
        [np.interp(grid, cv.fpr, cv.tpr) for cv in curves.values()], axis=0
    )
    macro = RocCurve(
        fpr=grid,
        tpr=mean_tpr,
        thresholds=np.full(len(grid), np.nan),
        auc=float(np.mean([cv.auc for cv in curves.values()])),
    )
    return curves, macro


# ---------------------------------------------------------------------------
# Classification report
# ---------------------------------------------------------------------------

@dataclass
class ClassRow:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    accuracy: float          # one-vs-rest (TP+TN)/N for this class


@dataclass
class ClassReport:
    rows: list
    accuracy: float          # overall trace/N
    macro: tuple             # (precision, recall, f1)
    weighted: tuple
    total: int


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class scores plus overall accuracy and macro/weighted means."""
    if cm.total < 1:
        raise DataError("cannot report on an empty confusion matrix")
    rows = []
    supports = cm.counts.sum(axis=1)
    for c, name in enumerate(cm.class_names):
        acc, rec, prec, f1 = eq_metrics(cm, c)
        rows.append(
            ClassRow(
                name=name, precision=prec, recall=rec, f1=f1,
                support=int(supports[c]), accuracy=acc,
            )
        )
    per = np.array([[r.precision, r.recall, r.f1] for r in rows])
    weights = supports / cm.total
    macro = tuple(per.mean(axis=0))
    weighted = tuple(weights @ per)
    return ClassReport(
        rows=rows,
        accuracy=float(np.trace(cm.counts)) / cm.total,
        macro=macro,
        weighted=weighted,
        total=cm.total,
    )


def render_report(
    cm: ConfusionMatrix,
    per_class_kappa: Optional[Sequence[float]] = None,
    per_class_mcc: Optional[Sequence[float]] = None,
    fmt: str = "text",
) -> str:
    """Render the per-class table and reliability coefficients.

    Text mode rounds to 3 decimals; csv and json keep full precision.
    Reliability values are computed from the matrix when not supplied.
    """
    report = class_report(cm)
    if per_class_kappa is None:
        per_class_kappa = [cohen_kappa_ovr(cm, c) for c in range(cm.n_classes)]
    if per_class_mcc is None:
        per_class_mcc = [mcc_ovr(cm, c) for c in range(cm.n_classes)]
    overall_kappa = cohen_kappa(cm)
    overall_mcc = mcc(cm)

    if fmt == "text":
        width = max(14, max(len(r.name) for r in report.rows) + 2)
        head = f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}{'accuracy':>10}"
        lines = [head, "-" * len(head)]
        for r in report.rows:
            lines.append(
                f"{r.name:<{width}}{r.precision:>10.3f}{r.recall:>10.3f}"
                f"{r.f1:>10.3f}{r.support:>9d}{r.accuracy:>10.3f}"
            )
        lines.append("")
        lines.append(f"{'accuracy':<{width}}{report.accuracy:>40.3f}")
        for label, triple in (("macro avg", report.macro), ("weighted avg", report.weighted)):
            lines.append(
                f"{label:<{width}}{triple[0]:>10.3f}{triple[1]:>10.3f}{triple[2]:>10.3f}{report.total:>9d}"
            )
        lines.append("")
        lines.append(f"{'class':<{width}}{'kappa':>10}{'mcc':>10}")
        lines.append("-" * (width + 20))
        for r, k, m in zip(report.rows, per_class_kappa, per_class_mcc):
            lines.append(f"{r.name:<{width}}{k:>10.3f}{m:>10.3f}")
        lines.append(f"{'overall':<{width}}{overall_kappa:>10.3f}{overall_mcc:>10.3f}")
        return "\n".join(lines) + "\n"

    if fmt == "csv":
        lines = ["row,class,precision,recall,f1,support,accuracy,kappa,mcc"]
        for c, r in enumerate(report.rows):
            lines.append(
                f"class,{r.name},{r.precision!r},{r.recall!r},{r.f1!r},"
                f"{r.support},{r.accuracy!r},{per_class_kappa[c]!r},{per_class_mcc[c]!r}"
            )
        lines.append(f"accuracy,,{report.accuracy!r},,,,,{overall_kappa!r},{overall_mcc!r}")
        lines.append(
            f"macro_avg,,{report.macro[0]!r},{report.macro[1]!r},{report.macro[2]!r},{report.total},,,"
        )
        lines.append(
            f"weighted_avg,,{report.weighted[0]!r},{report.weighted[1]!r},{report.weighted[2]!r},{report.total},,,"
        )
        return "\n".join(lines) + "\n"

    if fmt == "json":
        doc = {
            "classes": {
                r.name: {
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "support": r.support,
                    "accuracy": r.accuracy,
                    "kappa": per_class_kappa[c],
                    "mcc": per_class_mcc[c],
                }
                for c, r in enumerate(report.rows)
            },
            "accuracy": report.accuracy,
            "macro_avg": {
                "precision": report.macro[0], "recall": report.macro[1], "f1": report.macro[2],
            },
            "weighted_avg": {
                "precision": report.weighted[0], "recall": report.weighted[1], "f1": report.weighted[2],
            },
            "kappa": overall_kappa,
            "mcc": overall_mcc,
            "total": report.total,
        }
        return json.dumps(doc, indent=2) + "\n"

    raise ConfigError(f"unknown report format {fmt!r}, expected text, csv, or json")
