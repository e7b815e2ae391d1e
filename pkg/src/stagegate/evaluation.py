"""Per-class precision/recall/F1, weighted F1, confusion matrices, k-fold CV.

The dataset is unbalanced, so the headline score is the support-weighted
mean of per-class F1 (``f_avg``); plain accuracy is reported alongside.
0/0 precision or recall is defined as 0 and flagged as degenerate so that
edge-case suites cannot silently inflate scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Optional, Sequence

import numpy as np

from stagegate.corpus import LABEL_INDEX, LABEL_ORDER, Dataset, StageLabel


class EvalError(ValueError):
    pass


class LengthMismatch(EvalError):
    pass


class Empty(EvalError):
    pass


class ZeroSupports(EvalError):
    pass


class KTooLarge(EvalError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (n, n); rows = gold, columns = predicted
    labels: tuple[StageLabel, ...] = LABEL_ORDER

    def total(self) -> int:
        return int(self.counts.sum())

    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion(preds: Sequence[StageLabel], golds: Sequence[StageLabel],
              labels: tuple[StageLabel, ...] = LABEL_ORDER) -> ConfusionMatrix:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise Empty("no predictions to score")
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, g in zip(preds, golds):
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(counts=counts, labels=labels)


def prf(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, f1, degenerate-flag) per class; 0/0 defined as 0."""
    tp = np.diag(cm.counts).astype(np.float64)
    pred_totals = cm.counts.sum(axis=0).astype(np.float64)
    gold_totals = cm.counts.sum(axis=1).astype(np.float64)
    degenerate = (pred_totals == 0) | (gold_totals == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_totals > 0, tp / pred_totals, 0.0)
        recall = np.where(gold_totals > 0, tp / gold_totals, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.maximum(pr, 1e-300), 0.0)
    return precision, recall, f1, degenerate


def weighted_f1(per_class_f1: Sequence[float], supports: Sequence[int]) -> float:
    """Support-weighted mean of per-class F1."""
    f1 = np.asarray(per_class_f1, dtype=np.float64)
    n = np.asarray(supports, dtype=np.float64)
    if f1.shape != n.shape:
        raise LengthMismatch(f"{f1.shape} f1 values vs {n.shape} supports")
    if n.sum() <= 0:
        raise ZeroSupports("all supports are zero")
    return float((f1 * n).sum() / n.sum())


@dataclass(frozen=True)
class EvalReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    supports: np.ndarray
    f_avg: float
    accuracy: float
    degenerate: np.ndarray
    cm: ConfusionMatrix
    labels: tuple[StageLabel, ...] = LABEL_ORDER
    folds: Optional[list[dict]] = None

    def as_dict(self) -> dict:
        return {
            "per_class": {
                lab.value: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.supports[i]),
                    "degenerate": bool(self.degenerate[i]),
                }
                for i, lab in enumerate(self.labels)
            },
            "f_avg": self.f_avg,
            "accuracy": self.accuracy,
        }


def evaluate_predictions(preds: Sequence[StageLabel], golds: Sequence[StageLabel],
                         labels: tuple[StageLabel, ...] = LABEL_ORDER) -> EvalReport:
    cm = confusion(preds, golds, labels)
    precision, recall, f1, degenerate = prf(cm)
    supports = cm.supports()
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        supports=supports,
        f_avg=weighted_f1(f1, supports),
        accuracy=float(np.trace(cm.counts) / cm.total()),
        degenerate=degenerate,
        cm=cm,
        labels=labels,
    )


def kfold(
    d: Dataset | int,
    k: int,
    seed: int = 0,
    stratified: bool = False,
    labels: Optional[Sequence[StageLabel]] = None,
) -> list[tuple[list[int], list[int]]]:
    """k (train_indices, validation_indices) pairs partitioning the dataset.

    Fold sizes differ by at most one. Stratified mode deals each class's
    shuffled members round-robin across folds (labels come from the Dataset
    or the ``labels`` argument).
    """
    n = len(d) if isinstance(d, Dataset) else int(d)
    if k < 2:
        raise EvalError(f"k must be >= 2, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds dataset size {n}")
    rng = Random(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    if stratified:
        if labels is None and isinstance(d, Dataset):
            labels = [m.label for m in d]
        if labels is None:
            raise EvalError("stratified kfold requires labels")
        groups: dict[object, list[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        cursor = 0
        for key in sorted(groups, key=str):
            members = list(groups[key])
            rng.shuffle(members)
            for i in members:
                folds[cursor % k].append(i)
                cursor += 1
    else:
        idx = list(range(n))
        rng.shuffle(idx)
        base, extra = divmod(n, k)
        start = 0
        for fi in range(k):
            size = base + (1 if fi < extra else 0)
            folds[fi] = idx[start : start + size]
            start += size
    pairs = []
    for fi in range(k):
        val = sorted(folds[fi])
        train = sorted(i for fj in range(k) if fj != fi for i in folds[fj])
        pairs.append((train, val))
    return pairs
