"""L2-regularized linear SVM, one-vs-rest, trained by sub-gradient descent.

Per class c the primal objective is  0.5*||w||^2 + C * sum_i hinge(y_i (w.x_i + b)).
The default full-batch solver takes monotone sub-gradient steps (a Pegasos-style
base step size with objective-guarded backtracking, so the objective never
increases), plus a rescaling probe that jumps to (w/m, b/m) whenever that
lowers the objective — on separable data with large C this drives every
functional margin to >= 1. A stochastic per-example Pegasos mode is available
via mode="pegasos". Prediction is the argmax of per-class decision values,
ties broken by the fixed class order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from stagegate.corpus import LABEL_ORDER, StageLabel
from stagegate.features import FeatureSpace, SparseVector


class SvmError(ValueError):
    pass


class SingleClassInput(SvmError):
    pass


class DimMismatch(SvmError):
    pass


class TooFewExamplesForFolds(SvmError):
    pass


@dataclass
class SvmModel:
    weights: np.ndarray  # (n_classes, dim)
    biases: np.ndarray  # (n_classes,)
    C: float
    labels: tuple[StageLabel, ...] = LABEL_ORDER
    feature_space: Optional[FeatureSpace] = None
    history: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


def to_csr(X: Sequence[SparseVector]) -> sparse.csr_matrix:
    if not X:
        raise SvmError("empty feature matrix")
    dim = X[0].dim
    indptr = np.zeros(len(X) + 1, dtype=np.int64)
    for i, v in enumerate(X):
        if v.dim != dim:
            raise DimMismatch(f"vector {i} has dim {v.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + v.nnz()
    indices = np.concatenate([v.indices for v in X]) if X else np.array([], dtype=np.int64)
    data = np.concatenate([v.values for v in X]) if X else np.array([])
    return sparse.csr_matrix((data, indices, indptr), shape=(len(X), dim))


def _objective(A, y, w, b, C) -> float:
    margins = y * (A @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _solve_binary_fullbatch(A, y, C, max_epochs, tol):
    n, dim = A.shape
    w = np.zeros(dim)
    b = 0.0
    obj = _objective(A, y, w, b, C)
    lr = 1.0 / (1.0 + C * n)
    history = [obj]
    stall = 0
    for _ in range(max_epochs):
        margins = y * (A @ w + b)
        viol = margins < 1.0
        grad_w = w - C * (A[viol].T @ y[viol])
        grad_b = -C * float(y[viol].sum())
        accepted = False
        for _ in range(60):
            w2 = w - lr * grad_w
            b2 = b - lr * grad_b
            obj2 = _objective(A, y, w2, b2, C)
            if obj2 < obj:
                w, b, obj = w2, b2, obj2
                lr *= 1.3
                accepted = True
                break
            lr *= 0.5
        # rescale probe: if all points are on the correct side, scaling to the
        # minimum margin zeroes the hinge term; accept when it lowers the objective
        margins = y * (A @ w + b)
        m = margins.min() if len(margins) else 0.0
        if m > 0 and abs(m - 1.0) > 1e-15:
            obj_scaled = _objective(A, y, w / m, b / m, C)
            if obj_scaled < obj:
                w, b, obj = w / m, b / m, obj_scaled
        history.append(obj)
        if not accepted:
            break
        rel = abs(history[-2] - history[-1]) / max(abs(history[-2]), 1e-12)
        stall = stall + 1 if rel < tol else 0
        if stall >= 3:
            break
    return w, b, history


def _solve_binary_pegasos(A, y, C, max_epochs, seed):
    n, dim = A.shape
    lam = 1.0 / (C * n)
    w = np.zeros(dim)
    b = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    history = []
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            xi = A.getrow(i)
            margin = y[i] * ((xi @ w).item() + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                scale = eta * y[i] / n
                w[xi.indices] += scale * xi.data
                b += scale
        history.append(_objective(A, y, w, b, C))
    return w, b, history


def train_svm(
    X: Sequence[SparseVector],
    y: Sequence[StageLabel],
    C: float = 0.001,
    seed: int = 0,
    labels: tuple[StageLabel, ...] = LABEL_ORDER,
    mode: str = "full_batch",
    max_epochs: int = 200,
    tol: float = 1e-6,
    feature_space: Optional[FeatureSpace] = None,
) -> SvmModel:
    """One binary hinge problem per class; returns the stacked model."""
    if len(X) != len(y):
        raise SvmError(f"{len(X)} vectors vs {len(y)} labels")
    if len(X) < 2:
        raise SvmError("need at least 2 training examples")
    if C <= 0:
        raise SvmError(f"C must be positive, got {C}")
    if len(set(y)) < 2:
        raise SingleClassInput("training data contains a single class")
    A = to_csr(X)
    n_classes = len(labels)
    W = np.zeros((n_classes, A.shape[1]))
    biases = np.zeros(n_classes)
    histories = {}
    for ci, lab in enumerate(labels):
        t = np.array([1.0 if lab == yi else -1.0 for yi in y])
        if mode == "full_batch":
            w, b, hist = _solve_binary_fullbatch(A, t, C, max_epochs, tol)
        elif mode == "pegasos":
            w, b, hist = _solve_binary_pegasos(A, t, C, max_epochs, seed + ci)
        else:
            raise SvmError(f"unknown solver mode: {mode!r}")
        W[ci] = w
        biases[ci] = b
        histories[lab.value] = hist
    return SvmModel(
        weights=W, biases=biases, C=C, labels=labels,
        feature_space=feature_space, history=histories,
    )


def decision_values(m: SvmModel, x: SparseVector) -> np.ndarray:
    if x.dim != m.dim:
        raise DimMismatch(f"vector dim {x.dim} != model dim {m.dim}")
    return m.weights[:, x.indices] @ x.values + m.biases


def predict(m: SvmModel, x: SparseVector) -> StageLabel:
    return m.labels[int(np.argmax(decision_values(m, x)))]


def predict_batch(m: SvmModel, X: Sequence[SparseVector]) -> list[StageLabel]:
    A = to_csr(X)
    if A.shape[1] != m.dim:
        raise DimMismatch(f"matrix dim {A.shape[1]} != model dim {m.dim}")
    scores = A @ m.weights.T + m.biases
    return [m.labels[i] for i in np.argmax(scores, axis=1)]


def top_features(m: SvmModel, label: StageLabel, k: int) -> list[tuple[str, float]]:
    """The k largest positive weights for the class, decoded to feature names."""
    if k <= 0:
        return []
    ci = m.labels.index(label)
    w = m.weights[ci]
    order = np.argsort(-w, kind="stable")[:k]
    out = []
    for idx in order:
        if w[idx] <= 0:
            break
        name = m.feature_space.name(int(idx)) if m.feature_space else f"f[{int(idx)}]"
        out.append((name, float(w[idx])))
    return out


def select_C(
    X: Sequence[SparseVector],
    y: Sequence[StageLabel],
    grid: Sequence[float],
    folds: int = 10,
    seed: int = 0,
    **train_kwargs,
) -> tuple[float, dict[float, float]]:
    """Pick C maximizing mean weighted-F1 across CV folds; ties -> smaller C."""
    from stagegate.evaluation import evaluate_predictions, kfold

    if not grid:
        raise SvmError("empty C grid")
    if folds < 2:
        raise TooFewExamplesForFolds("folds must be >= 2")
    if len(X) < folds:
        raise TooFewExamplesForFolds(f"{len(X)} examples < {folds} folds")
    pairs = kfold(len(X), folds, seed=seed, labels=list(y), stratified=True)
    scores: dict[float, float] = {}
    for C in grid:
        fold_scores = []
        for train_idx, val_idx in pairs:
            model = train_svm([X[i] for i in train_idx], [y[i] for i in train_idx], C=C, **train_kwargs)
            preds = predict_batch(model, [X[i] for i in val_idx])
            report = evaluate_predictions(preds, [y[i] for i in val_idx])
            fold_scores.append(report.f_avg)
        scores[C] = float(np.mean(fold_scores))
    best = min(sorted(grid), key=lambda c: (-scores[c], c))
    return best, scores


# --- persistence --------------------------------------------------------------

MODEL_FORMAT = "stagegate-svm"
MODEL_VERSION = 1


def svm_to_payload(m: SvmModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "C": m.C,
        "labels": [lab.value for lab in m.labels],
        "dim": m.dim,
        "weights": [[float(x) for x in row] for row in m.weights],
        "biases": [float(x) for x in m.biases],
        "feature_space": m.feature_space.to_dict() if m.feature_space else None,
        "feature_space_hash": m.feature_space.descriptor_hash() if m.feature_space else None,
    }


def svm_from_payload(payload: dict, where: str = "<payload>") -> SvmModel:
    if payload.get("format") != MODEL_FORMAT:
        raise SvmError(f"{where}: not an SVM model payload")
    if payload.get("version") != MODEL_VERSION:
        raise SvmError(f"{where}: unsupported model version")
    fs = FeatureSpace.from_dict(payload["feature_space"]) if payload.get("feature_space") else None
    if fs is not None and payload.get("feature_space_hash") not in (None, fs.descriptor_hash()):
        raise SvmError(f"{where}: feature-space hash mismatch")
    return SvmModel(
        weights=np.asarray(payload["weights"], dtype=np.float64),
        biases=np.asarray(payload["biases"], dtype=np.float64),
        C=float(payload["C"]),
        labels=tuple(StageLabel(v) for v in payload["labels"]),
        feature_space=fs,
    )


def save_svm(m: SvmModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(svm_to_payload(m)), encoding="utf-8")


def load_svm(path: str | Path) -> SvmModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return svm_from_payload(payload, where=str(path))
