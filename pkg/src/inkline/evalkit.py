"""Evaluation metrics: edit distance, CER/WER, confusion-matrix statistics, ROC/AUC, bootstrap CIs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class UndefinedReferenceError(ValueError):
    pass


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance over code points (or any sequence of hashables)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(pred: str, real: str) -> float:
    if len(real) == 0:
        raise UndefinedReferenceError("CER is undefined for an empty reference")
    return levenshtein(pred, real) / len(real)


def corpus_cer(preds: Sequence[str], reals: Sequence[str]) -> float:
    """Total edits over total reference characters."""
    if len(preds) != len(reals):
        raise ValueError("prediction and reference lists differ in length")
    total = sum(len(r) for r in reals)
    if total == 0:
        raise UndefinedReferenceError("CER is undefined for empty references")
    return sum(levenshtein(p, r) for p, r in zip(preds, reals)) / total


def wer(preds: Sequence[str], reals: Sequence[str]) -> float:
    """Word-level error: the fraction of words not reproduced exactly."""
    if len(preds) != len(reals):
        raise ValueError("prediction and reference lists differ in length")
    if not reals:
        raise UndefinedReferenceError("WER is undefined for an empty word list")
    return sum(p != r for p, r in zip(preds, reals)) / len(reals)


@dataclass
class ConfusionMatrix:
    categories: list
    counts: np.ndarray

    @classmethod
    def from_labels(cls, true, pred, categories=None) -> "ConfusionMatrix":
        if categories is None:
            categories = sorted(set(true) | set(pred))
        index = {c: i for i, c in enumerate(categories)}
        counts = np.zeros((len(categories), len(categories)), dtype=np.int64)
        for t, p in zip(true, pred):
            counts[index[t], index[p]] += 1
        return cls(list(categories), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def to_csv(self) -> str:
        head = "true\\pred," + ",".join(str(c) for c in self.categories)
        rows = [f"{c}," + ",".join(str(int(v)) for v in row) for c, row in zip(self.categories, self.counts)]
        return "\n".join([head, *rows]) + "\n"


@dataclass
class CategoryMetrics:
    recall: float | None
    precision: float | None
    f1: float | None


def _ratio(num, den):
    return num / den if den else None


def classification_metrics(cm: ConfusionMatrix) -> tuple[dict, float]:
    """Per-category recall/precision/F1 and overall accuracy.

    A metric with a zero denominator is reported as None rather than 0.
    """
    c = cm.counts
    if c.sum() == 0:
        raise ValueError("empty confusion matrix")
    out = {}
    for i, cat in enumerate(cm.categories):
        tp = c[i, i]
        fn = c[i].sum() - tp
        fp = c[:, i].sum() - tp
        recall = _ratio(tp, tp + fn)
        precision = _ratio(tp, tp + fp)
        if recall is None or precision is None:
            f1 = None
        else:
            f1 = _ratio(2 * precision * recall, precision + recall)
        out[cat] = CategoryMetrics(recall, precision, f1)
    return out, cm.correct / cm.total


@dataclass
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def roc_auc(scores, labels) -> tuple[list[RocPoint], float]:
    """ROC curve over every distinct score threshold and its trapezoidal area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative case")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    curve = [RocPoint(np.inf, 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            tp += int(y[j])
            fp += int(not y[j])
            j += 1
        curve.append(RocPoint(float(s[i]), tp / n_pos, fp / n_neg))
        i = j
    fpr = np.array([p.fpr for p in curve])
    tpr = np.array([p.tpr for p in curve])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return curve, auc


@dataclass
class BootstrapCI:
    point: float
    lower: float
    upper: float
    confidence: float
    n_resamples: int


def bootstrap_ci(values=None, *, preds=None, reals=None, metric: Callable | None = None,
                 n_resamples: int = 1000, confidence: float = 0.95,
                 rng: np.random.Generator | None = None) -> BootstrapCI:
    """Percentile bootstrap over samples.

    Either pass per-sample ``values`` (the statistic is their mean) or
    ``preds``/``reals`` together with ``metric(preds, reals)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    if values is not None:
        vals = np.asarray(values, dtype=np.float64)
        n = len(vals)
        if n < 2:
            raise ValueError("bootstrap needs at least two samples")
        point = float(vals.mean())
        idx = rng.integers(0, n, size=(n_resamples, n))
        stats = vals[idx].mean(axis=1)
    else:
        if metric is None or preds is None or reals is None:
            raise ValueError("pass values, or preds, reals and metric")
        n = len(preds)
        if n < 2:
            raise ValueError("bootstrap needs at least two samples")
        point = float(metric(preds, reals))
        stats = np.empty(n_resamples)
        for k in range(n_resamples):
            idx = rng.integers(0, n, size=n)
            stats[k] = metric([preds[i] for i in idx], [reals[i] for i in idx])
    tail = (1.0 - confidence) / 2.0
    lower, upper = np.quantile(stats, [tail, 1.0 - tail])
    # heavily skewed resamples can leave the empirical value just outside the percentiles
    return BootstrapCI(point, float(min(lower, point)), float(max(upper, point)), confidence, n_resamples)
