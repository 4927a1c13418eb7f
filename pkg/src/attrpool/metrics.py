"""Multi-label evaluation: class-centric mean accuracy and example-based scores."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from attrpool.errors import DomainError


def binarize(scores, thresholds=None) -> np.ndarray:
    """``1`` where ``score >= threshold``; default threshold is ``1/k``.

    ``thresholds`` may be a scalar or one value per attribute.
    """
    scores = np.asarray(scores, dtype=np.float64)
    k = scores.shape[-1]
    if thresholds is None:
        thresholds = 1.0 / k
    return (scores >= np.asarray(thresholds, dtype=np.float64)).astype(np.int8)


def _check(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    preds = np.atleast_2d(np.asarray(preds)).astype(bool)
    labels = np.atleast_2d(np.asarray(labels)).astype(bool)
    if preds.shape != labels.shape:
        raise DomainError(f"shape mismatch: preds {preds.shape} vs labels {labels.shape}")
    if preds.shape[0] == 0:
        raise DomainError("empty evaluation set")
    return preds, labels


def per_attribute_rates(preds, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """True-positive rate, true-negative rate and their mean per attribute.

    An attribute with no positives (or no negatives) has an undefined rate;
    its mean accuracy is then the defined rate alone.
    """
    preds, labels = _check(preds, labels)
    pos = labels.sum(axis=0)
    neg = (~labels).sum(axis=0)
    tp = (preds & labels).sum(axis=0)
    tn = (~preds & ~labels).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(pos > 0, tp / np.maximum(pos, 1), np.nan)
        tnr = np.where(neg > 0, tn / np.maximum(neg, 1), np.nan)
    acc = np.where(np.isnan(tpr), tnr, np.where(np.isnan(tnr), tpr, 0.5 * (tpr + tnr)))
    return tpr, tnr, acc


def mean_accuracy(preds, labels) -> float:
    return float(np.mean(per_attribute_rates(preds, labels)[2]))


def example_based(preds, labels) -> tuple[float, float, float, float]:
    """Instance-averaged Jaccard accuracy, precision, recall and F1."""
    preds, labels = _check(preds, labels)
    inter = (preds & labels).sum(axis=1).astype(np.float64)
    union = (preds | labels).sum(axis=1)
    n_pred = preds.sum(axis=1)
    n_true = labels.sum(axis=1)
    # both sets empty counts as a perfect match
    acc = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    prec = np.where(n_pred > 0, inter / np.maximum(n_pred, 1), np.where(n_true == 0, 1.0, 0.0))
    rec = np.where(n_true > 0, inter / np.maximum(n_true, 1), 1.0)
    denom = prec + rec
    f1 = np.where(denom > 0, 2 * prec * rec / np.where(denom > 0, denom, 1), 0.0)
    return float(acc.mean()), float(prec.mean()), float(rec.mean()), float(f1.mean())


@dataclass
class MetricsReport:
    mA: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    names: list[str] = field(default_factory=list)
    per_attribute: np.ndarray | None = None   # (k, 3): TPR, TNR, mean accuracy

    def as_dict(self) -> dict[str, float]:
        return {"mA": self.mA, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}

    def to_text(self) -> str:
        lines = [f"{key:>10}  {100 * v:6.2f}" for key, v in self.as_dict().items()]
        if self.per_attribute is not None:
            width = max(len(n) for n in self.names)
            lines.append("")
            lines.append(f"{'attribute':<{width}}  {'TPR':>6}  {'TNR':>6}  {'mA':>6}")
            for name, (tpr, tnr, acc) in zip(self.names, self.per_attribute):
                lines.append(f"{name:<{width}}  {tpr:6.3f}  {tnr:6.3f}  {acc:6.3f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key, v in self.as_dict().items():
            w.writerow([key, repr(v)])
        if self.per_attribute is not None:
            for name, row in zip(self.names, self.per_attribute):
                for key, v in zip(("tpr", "tnr", "mA"), row):
                    w.writerow([f"{name}.{key}", repr(float(v))])
        return buf.getvalue()


def evaluate(preds, labels, names=None) -> MetricsReport:
    preds, labels = _check(preds, labels)
    tpr, tnr, acc = per_attribute_rates(preds, labels)
    a, p, r, f = example_based(preds, labels)
    names = list(names) if names is not None else [f"attr{j}" for j in range(labels.shape[1])]
    return MetricsReport(float(acc.mean()), a, p, r, f, names, np.column_stack([tpr, tnr, acc]))


def calibrate_thresholds(scores, labels, candidates=None) -> np.ndarray:
    """Per-attribute thresholds maximising balanced accuracy on held-out data.

    Ties go to the smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    k = scores.shape[1]
    out = np.empty(k)
    for j in range(k):
        s = scores[:, j]
        cand = np.unique(s) if candidates is None else np.unique(np.asarray(candidates, dtype=np.float64))
        pos = np.sort(s[labels[:, j]])
        neg = np.sort(s[~labels[:, j]])
        tpr = (pos.size - np.searchsorted(pos, cand, "left")) / max(pos.size, 1)
        tnr = np.searchsorted(neg, cand, "left") / max(neg.size, 1)
        if pos.size and neg.size:
            acc = 0.5 * (tpr + tnr)
        else:
            acc = tpr if pos.size else tnr
        out[j] = cand[int(np.argmax(acc))] if cand.size else 1.0 / k
    return out
