"""Confusion-matrix metrics (macro averaged), PR curves and report output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

METRIC_NAMES = ("accuracy", "npv", "precision", "specificity", "recall", "f1",
                "aunp", "kappa", "mcc", "g_measure")
PER_CLASS_NAMES = ("precision", "recall", "specificity", "npv", "f1", "g_measure")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(labels, predictions, n_classes: int | None = None) -> ConfusionMatrix:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    if labels.shape != predictions.shape:
        raise ParameterError(f"{len(labels)} labels but {len(predictions)} predictions")
    if n_classes is None:
        n_classes = int(max(labels.max(initial=0), predictions.max(initial=0))) + 1
    if len(labels) and (min(labels.min(), predictions.min()) < 0
                        or max(labels.max(), predictions.max()) >= n_classes):
        raise ParameterError(f"class index outside [0, {n_classes})")
    counts = np.bincount(labels * n_classes + predictions, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes).astype(np.int64))


@dataclass
class MetricsReport:
    accuracy: float
    npv: float
    precision: float
    specificity: float
    recall: float
    f1: float
    aunp: float
    kappa: float
    mcc: float
    g_measure: float
    confusion: np.ndarray
    per_class: dict = field(default_factory=dict)  # metric name -> list over classes
    pr_curves: dict = field(default_factory=dict)  # class -> [[recall, precision], ...]
    ap: dict = field(default_factory=dict)  # class -> average precision
    degenerate: list = field(default_factory=list)
    aunp_mode: str = "balanced"

    def scalars(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        total = max(int(self.confusion.sum()), 1)
        return {
            "metrics": self.scalars(),
            "per_class": {k: [float(v) for v in vals] for k, vals in self.per_class.items()},
            "confusion": self.confusion.tolist(),
            "confusion_fraction": (self.confusion / total).tolist(),
            "pr_curves": {str(k): [[float(r), float(p)] for r, p in pts] for k, pts in self.pr_curves.items()},
            "ap": {str(k): float(v) for k, v in self.ap.items()},
            "degenerate": sorted(self.degenerate),
            "aunp_mode": self.aunp_mode,
        }


def _div(num, den, what: str, flags: list) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    for k in np.flatnonzero(~ok):
        flags.append(f"{what}[{k}]")
    return out


def one_vs_rest(cm: ConfusionMatrix):
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = c.sum() - tp - fp - fn
    return tp, fp, fn, tn


def macro_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Scalar metrics from a confusion matrix.

    Binary-derived metrics are computed one-vs-rest per class and averaged
    without weights. Accuracy is overall (trace / total); kappa and MCC use
    the full matrix. AUNP is the prevalence-weighted mean of the per-class
    balanced accuracy. A zero denominator yields 0 and is listed in
    ``degenerate``.
    """
    counts = np.asarray(cm.counts)
    n = counts.sum()
    if n == 0:
        raise ParameterError("confusion matrix is empty")
    flags: list[str] = []
    tp, fp, fn, tn = one_vs_rest(cm)
    precision = _div(tp, tp + fp, "precision", flags)
    recall = _div(tp, tp + fn, "recall", flags)
    specificity = _div(tn, tn + fp, "specificity", flags)
    npv = _div(tn, tn + fn, "npv", flags)
    f1 = _div(2 * precision * recall, precision + recall, "f1", flags)
    g = np.sqrt(recall * specificity)

    c = counts.astype(np.float64)
    accuracy = np.trace(c) / n
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    p_e = float((rows * cols).sum() / n**2)
    if p_e == 1.0:
        flags.append("kappa")
        kappa = 0.0
    else:
        kappa = (accuracy - p_e) / (1.0 - p_e)
    cov_xy = np.trace(c) * n - (rows * cols).sum()
    cov_xx = n**2 - (cols**2).sum()
    cov_yy = n**2 - (rows**2).sum()
    if cov_xx * cov_yy == 0:
        flags.append("mcc")
        mcc = 0.0
    else:
        mcc = cov_xy / math.sqrt(cov_xx * cov_yy)
    aunp = float((rows / n * (recall + specificity) / 2).sum())

    return MetricsReport(
        accuracy=float(accuracy), npv=float(npv.mean()), precision=float(precision.mean()),
        specificity=float(specificity.mean()), recall=float(recall.mean()), f1=float(f1.mean()),
        aunp=aunp, kappa=float(kappa), mcc=float(mcc), g_measure=float(g.mean()),
        confusion=counts.copy(),
        per_class={"precision": precision, "recall": recall, "specificity": specificity,
                   "npv": npv, "f1": f1, "g_measure": g},
        degenerate=flags,
    )


def macro_f1(labels, predictions, n_classes: int) -> float:
    return macro_metrics(confusion(labels, predictions, n_classes)).f1


def _threshold_counts(y, scores):
    """Cumulative TP/FP at each distinct score, highest threshold first."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = last + 1 - tps
    return tps, fps, s[last]


def pr_curve(labels, class_scores, class_k: int):
    """Precision/recall at every distinct threshold of ``class_scores``.

    Returns ``(points, ap)``. ``points`` is an ``(n, 2)`` array of
    ``(recall, precision)`` ordered by increasing threshold (recall
    non-increasing) and ending at ``(0, 1)``. AP is the step sum
    ``sum_n (R_n - R_{n-1}) P_n`` over decreasing thresholds.
    """
    y = (np.asarray(labels).ravel() == class_k).astype(np.float64)
    scores = np.asarray(class_scores, dtype=np.float64).ravel()
    if len(y) != len(scores):
        raise ParameterError(f"{len(y)} labels but {len(scores)} scores")
    n_pos = y.sum()
    if n_pos == 0:
        raise ParameterError(f"class {class_k} has no positive samples; AP is undefined")
    tps, fps, _ = _threshold_counts(y, scores)
    precision = tps / (tps + fps)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    points = np.column_stack([np.r_[recall[::-1], 0.0], np.r_[precision[::-1], 1.0]])
    return points, ap


def average_precision(labels, class_scores, class_k: int) -> float:
    return pr_curve(labels, class_scores, class_k)[1]


def aunp_npv_recall(labels, probs) -> float:
    """Literal reading of AUNP: area under the NPV-vs-recall curve traced by
    sweeping each class's score threshold (step rule), weighted by class
    prevalence."""
    labels = np.asarray(labels).ravel()
    probs = np.asarray(probs, dtype=np.float64)
    total = 0.0
    for k in range(probs.shape[1]):
        y = (labels == k).astype(np.float64)
        n_pos = y.sum()
        if n_pos == 0:
            continue
        n_neg = len(y) - n_pos
        tps, fps, _ = _threshold_counts(y, probs[:, k])
        fn = n_pos - tps
        tn = n_neg - fps
        recall = np.r_[0.0, tps / n_pos]
        npv = np.where(tn + fn > 0, tn / np.maximum(tn + fn, 1), 1.0)
        # step rule, as for AP
        total += n_pos / len(y) * float(np.sum(np.diff(recall) * npv))
    return total


def evaluate(labels, probs, aunp_mode: str = "balanced") -> MetricsReport:
    """Full report from true labels and per-class probabilities."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[1]
    preds = np.argmax(probs, axis=1)
    report = macro_metrics(confusion(labels, preds, c))
    if aunp_mode == "npv-recall":
        report.aunp = aunp_npv_recall(labels, probs)
    elif aunp_mode != "balanced":
        raise ParameterError(f"unknown aunp mode {aunp_mode!r}")
    report.aunp_mode = aunp_mode
    for k in range(c):
        if (labels == k).any():
            pts, ap = pr_curve(labels, probs[:, k], k)
            report.pr_curves[k] = pts
            report.ap[k] = ap
        else:
            report.degenerate.append(f"ap[{k}]")
    return report


def report_json(report: MetricsReport, path) -> None:
    text = json.dumps(report.to_dict(), sort_keys=True, indent=1)
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc


def write_pr_csv(points, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["recall", "precision"])
        for r, p in points:
            w.writerow([repr(float(r)), repr(float(p))])


def write_confusion_csv(counts, path) -> None:
    counts = np.asarray(counts)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *range(counts.shape[1])])
        for k, row in enumerate(counts):
            w.writerow([k, *row.tolist()])


def radar_area(values) -> float:
    """Area of the polygon with ``values`` (clipped to [0, 1]) on equally
    spaced axes."""
    r = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    n = len(r)
    if n < 3:
        raise ParameterError("radar area needs at least three axes")
    return float(0.5 * math.sin(2 * math.pi / n) * np.sum(r * np.roll(r, -1)))
