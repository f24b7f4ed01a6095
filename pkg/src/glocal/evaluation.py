"""Multi-label AUROC with uncertain-label masking.

Label sentinels: 1 present, 0 absent, -1 uncertain, -2 missing. The
uncertain and missing values are excluded per class before computing the
metric; classes left with a single label value are reported as undefined
and excluded from the mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class EvaluationError(ValueError):
    pass


@dataclass
class ClassResult:
    auroc: float | None
    n_pos: int
    n_neg: int

    @property
    def counted(self) -> int:
        return self.n_pos + self.n_neg


@dataclass
class EvaluationReport:
    per_class: dict[str, ClassResult]
    mean_auroc: float

    def defined_classes(self) -> list[str]:
        return [c for c, r in self.per_class.items() if r.auroc is not None]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "auroc", "n_pos", "n_neg"])
            for cname, r in self.per_class.items():
                writer.writerow([cname, "" if r.auroc is None else f"{r.auroc:.10f}", r.n_pos, r.n_neg])
            writer.writerow(["mean", f"{self.mean_auroc:.10f}", "", ""])


def auroc(scores, labels) -> float | None:
    """Probability a random positive outranks a random negative (ties 0.5).

    Rank-based Mann-Whitney computation; returns None when only one label
    value is present (the metric is undefined, not zero).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise EvaluationError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.all(np.isin(labels, (0, 1))):
        raise EvaluationError("auroc expects binary labels; mask uncertain values first")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(predictions: np.ndarray, labels: np.ndarray, class_names=None) -> EvaluationReport:
    """Per-class AUROC over evaluable entries only; -1/-2 are never read.

    ``predictions``: (samples, classes) scores; ``labels``: same shape over
    {1, 0, -1, -2}.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise EvaluationError(f"predictions {predictions.shape} vs labels {labels.shape}")
    n_classes = predictions.shape[1]
    if class_names is None:
        class_names = [f"class_{i}" for i in range(n_classes)]
    if len(class_names) != n_classes:
        raise EvaluationError(f"{len(class_names)} class names for {n_classes} columns")

    per_class: dict[str, ClassResult] = {}
    defined: list[float] = []
    for j, cname in enumerate(class_names):
        col_labels = labels[:, j]
        keep = np.isin(col_labels, (0, 1))
        kept_labels = col_labels[keep]
        n_pos = int(np.sum(kept_labels == 1))
        n_neg = int(np.sum(kept_labels == 0))
        if n_pos == 0 or n_neg == 0:
            per_class[cname] = ClassResult(auroc=None, n_pos=n_pos, n_neg=n_neg)
            continue
        value = auroc(predictions[keep, j], kept_labels)
        per_class[cname] = ClassResult(auroc=value, n_pos=n_pos, n_neg=n_neg)
        defined.append(value)
    if not defined:
        raise EvaluationError("no class has both positive and negative labels after masking")
    return EvaluationReport(per_class=per_class, mean_auroc=float(np.mean(defined)))
