"""Evaluation suite: accuracy, macro P/R/F1, confusion matrix, PR curves.

Precision/recall/F1 are macro-averaged (unweighted mean over classes);
classes absent from both truth and prediction are left out of the average so
they cannot dilute it. A per-class denominator of zero yields a per-class
score of zero. PR-AUC uses step interpolation (average precision); the
trapezoidal alternative is optimistic on PR curves and is not offered.
Accuracy is reported in percent, the other metrics as fractions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ConfusionMatrix:
    """Rows = true class, columns = predicted class."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else 0.0


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recalls: np.ndarray
    precisions: np.ndarray
    auc: float


@dataclass
class MacroScores:
    precision: float
    recall: float
    f1: float
    per_class: dict[int, dict[str, float]]


@dataclass
class EvalReport:
    accuracy_pct: float
    precision: float
    recall: float
    f1: float
    per_class: dict[int, dict[str, float]]
    confusion: ConfusionMatrix
    pr_curves: dict[int, PrCurve] = field(default_factory=dict)


def confusion(y_true, y_pred, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (
        y_true.min() < 0
        or y_true.max() >= n_classes
        or y_pred.min() < 0
        or y_pred.max() >= n_classes
    ):
        raise ValueError(f"labels outside 0..{n_classes - 1}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts)


def macro_prf(cm: ConfusionMatrix) -> MacroScores:
    counts = cm.counts
    if counts.size == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(counts).astype(float)
    col = counts.sum(axis=0).astype(float)
    row = counts.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / np.maximum(col, 1), 0.0)
        recall = np.where(row > 0, diag / np.maximum(row, 1), 0.0)
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)

    present = (row > 0) | (col > 0)
    per_class = {
        int(c): {
            "precision": float(precision[c]),
            "recall": float(recall[c]),
            "f1": float(f1[c]),
            "support": int(row[c]),
        }
        for c in range(len(diag))
    }
    if not present.any():
        return MacroScores(0.0, 0.0, 0.0, per_class)
    return MacroScores(
        precision=float(precision[present].mean()),
        recall=float(recall[present].mean()),
        f1=float(f1[present].mean()),
        per_class=per_class,
    )


def pr_curve(scores, is_positive) -> PrCurve:
    """Precision-recall sweep over the distinct scores, descending.

    At each threshold t the positive prediction set is {score >= t}. AUC is
    the step-interpolated sum((R_i - R_{i-1}) * P_i) with R_0 = 0.
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(is_positive, dtype=bool)
    if scores.shape != positive.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {positive.shape}")
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive sample")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    cum_tp = np.cumsum(positive[order])
    # last index of each distinct score = the full prediction set at that threshold
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    idx = np.concatenate([boundary, [len(scores) - 1]])
    thresholds = sorted_scores[idx]
    tp = cum_tp[idx].astype(float)
    predicted = idx + 1.0
    precisions = tp / predicted
    recalls = tp / n_pos
    auc = float(np.sum(np.diff(np.concatenate([[0.0], recalls])) * precisions))
    return PrCurve(
        thresholds=thresholds, recalls=recalls, precisions=precisions, auc=auc
    )


def evaluate_predictions(
    y_true, y_pred, n_classes: int, scores: np.ndarray | None = None
) -> EvalReport:
    """Full report; ``scores`` is an optional (n, n_classes) matrix used for
    per-class PR curves (classes without positives are skipped)."""
    cm = confusion(y_true, y_pred, n_classes)
    macro = macro_prf(cm)
    curves: dict[int, PrCurve] = {}
    if scores is not None:
        scores = np.asarray(scores, dtype=float)
        truth = np.asarray(y_true, dtype=int)
        if scores.shape != (len(truth), n_classes):
            raise ValueError(
                f"scores shape {scores.shape} != ({len(truth)}, {n_classes})"
            )
        for cls in range(n_classes):
            mask = truth == cls
            if mask.any():
                curves[cls] = pr_curve(scores[:, cls], mask)
    return EvalReport(
        accuracy_pct=cm.accuracy * 100.0,
        precision=macro.precision,
        recall=macro.recall,
        f1=macro.f1,
        per_class=macro.per_class,
        confusion=cm,
        pr_curves=curves,
    )


def write_report(
    report: EvalReport, out_dir: str | Path, config_hash: str | None = None
) -> list[Path]:
    """Emit metrics.json, confusion_matrix.csv, pr_curve_class_<c>.csv.

    Files are written with sorted keys and LF endings so identical inputs
    produce byte-identical outputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    payload = {
        "format": "bloomcast-metrics/1",
        "accuracy_pct": report.accuracy_pct,
        "macro": {
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
        },
        "per_class": {str(c): v for c, v in report.per_class.items()},
        "n_samples": report.confusion.total,
        "pr_auc": {str(c): curve.auc for c, curve in report.pr_curves.items()},
    }
    if config_hash is not None:
        payload["config_hash"] = config_hash
    metrics_path = out / "metrics.json"
    metrics_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(metrics_path)

    cm_path = out / "confusion_matrix.csv"
    n = len(report.confusion.counts)
    with open(cm_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class"] + [str(c) for c in range(n)])
        for c, row in enumerate(report.confusion.counts):
            writer.writerow([str(c)] + [str(int(v)) for v in row])
    written.append(cm_path)

    for cls, curve in sorted(report.pr_curves.items()):
        curve_path = out / f"pr_curve_class_{cls}.csv"
        with open(curve_path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "recall", "precision"])
            for t, r, p in zip(curve.thresholds, curve.recalls, curve.precisions):
                writer.writerow([repr(float(t)), repr(float(r)), repr(float(p))])
        written.append(curve_path)
    return written
