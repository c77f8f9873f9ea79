"""Multi-class prediction from feature rows: k-nn and linear max-margin.

The SVM is a one-vs-rest L1-loss linear machine trained by dual
coordinate descent (no intercept; the stored biases exist for decision
shifting and are zero after training). Hyperparameters come from
stratified cross-validation; metrics mirror the per-class recall /
precision layout used for reporting.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .mesh import FeatureMatrix


def _as_matrix(f) -> tuple[np.ndarray, str | None]:
    if isinstance(f, FeatureMatrix):
        return f.values, column_fingerprint(f.column_map)
    return np.asarray(f, dtype=np.float64), None


def column_fingerprint(column_map) -> str:
    payload = json.dumps([list(map(int, pair)) for pair in column_map])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainedModel:
    kind: str  # knn | svm
    n_classes: int
    fingerprint: str | None = None
    # knn
    train_x: np.ndarray | None = None
    train_y: np.ndarray | None = None
    k: int | None = None
    metric: str = "euclidean"
    # svm
    weights: np.ndarray | None = None  # (n_classes, K)
    biases: np.ndarray | None = None
    c_reg: float | None = None
    converged: bool = True


@dataclass(frozen=True)
class Metrics:
    confusion: np.ndarray  # (omega, omega), rows = truth
    recall: np.ndarray  # percent
    precision: np.ndarray  # percent
    macro_recall: float
    macro_precision: float
    accuracy: float
    undefined_precision: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "recall": [round(v, 2) for v in self.recall],
            "precision": [round(v, 2) for v in self.precision],
            "macro_recall": round(self.macro_recall, 2),
            "macro_precision": round(self.macro_precision, 2),
            "accuracy": round(self.accuracy, 2),
            "undefined_precision": list(self.undefined_precision),
        }


# ---------------------------------------------------------------------------
# k-nn

def train_knn(f, labels, k: int, metric: str = "euclidean") -> TrainedModel:
    x, fp = _as_matrix(f)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise DataError("labels do not align with feature rows")
    if not (1 <= k <= x.shape[0]):
        raise ConfigError(f"k={k} exceeds {x.shape[0]} training rows")
    if metric not in ("euclidean", "cosine"):
        raise ConfigError(f"unknown metric {metric!r}")
    return TrainedModel(
        "knn", int(y.max()), fp, train_x=x, train_y=y, k=k, metric=metric
    )


def _pairwise_distance(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        d2 = (
            (a**2).sum(axis=1)[:, None]
            - 2.0 * a @ b.T
            + (b**2).sum(axis=1)[None, :]
        )
        return np.sqrt(np.maximum(d2, 0.0))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    na[na == 0.0] = 1.0
    nb[nb == 0.0] = 1.0
    return 1.0 - (a @ b.T) / np.outer(na, nb)


def _knn_predict(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    dist = _pairwise_distance(x, model.train_x, model.metric)
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        # label as secondary sort key: distance ties resolve by label id,
        # making the vote invariant to training-row permutation
        order = np.lexsort((model.train_y, dist[i]))[: model.k]
        votes = np.bincount(model.train_y[order], minlength=model.n_classes + 1)
        out[i] = int(np.argmax(votes))  # argmax takes the smaller label on ties
    return out


# ---------------------------------------------------------------------------
# linear SVM (one-vs-rest, L1 hinge, dual coordinate descent)

def _dual_cd_binary(
    x: np.ndarray,
    y: np.ndarray,
    c_reg: float,
    tol: float,
    max_iter: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool]:
    n = x.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    qd = (x**2).sum(axis=1)
    active = np.flatnonzero(qd > 0)
    for _ in range(max_iter):
        worst = 0.0
        for i in rng.permutation(active):
            g = y[i] * (w @ x[i]) - 1.0
            pg = g
            if alpha[i] <= 0.0:
                pg = min(g, 0.0)
            elif alpha[i] >= c_reg:
                pg = max(g, 0.0)
            worst = max(worst, abs(pg))
            if pg != 0.0:
                new = min(max(alpha[i] - g / qd[i], 0.0), c_reg)
                if new != alpha[i]:
                    w += (new - alpha[i]) * y[i] * x[i]
                    alpha[i] = new
        if worst < tol:
            return w, True
    return w, False


def train_linear_svm(
    f,
    labels,
    c_reg: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
    seed: int = 0,
) -> TrainedModel:
    x, fp = _as_matrix(f)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise DataError("labels do not align with feature rows")
    omega = int(y.max())
    if omega < 2:
        raise DataError("SVM needs at least 2 classes")
    if c_reg <= 0:
        raise ConfigError("C_reg must be positive")
    weights = np.zeros((omega, x.shape[1]))
    converged = True
    for w_idx in range(omega):
        rng = np.random.default_rng(seed + w_idx)
        y_bin = np.where(y == w_idx + 1, 1.0, -1.0)
        weights[w_idx], ok = _dual_cd_binary(x, y_bin, c_reg, tol, max_iter, rng)
        converged = converged and ok
    return TrainedModel(
        "svm",
        omega,
        fp,
        weights=weights,
        biases=np.zeros(omega),
        c_reg=c_reg,
        converged=converged,
    )


def predict(model: TrainedModel, f) -> np.ndarray:
    x, fp = _as_matrix(f)
    if model.fingerprint is not None and fp is not None and fp != model.fingerprint:
        raise DataError("feature columns do not match the trained model")
    if model.kind == "knn":
        return _knn_predict(model, x)
    scores = x @ model.weights.T + model.biases
    # argmax returns the first (lowest) class id on ties
    return np.argmax(scores, axis=1).astype(np.int64) + 1


# ---------------------------------------------------------------------------
# cross-validation

def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise DataError(
                f"class {cls} has {len(idx)} samples, fewer than {folds} folds"
            )
        idx = rng.permutation(idx)
        assign[idx] = np.arange(len(idx)) % folds
    return assign


def _train_with_params(kind: str, x, y, params: dict, seed: int) -> TrainedModel:
    if kind == "knn":
        return train_knn(x, y, params["k"], params.get("metric", "euclidean"))
    if kind == "svm":
        return train_linear_svm(
            x,
            y,
            params.get("c_reg", 1.0),
            params.get("tol", 1e-4),
            params.get("max_iter", 1000),
            seed=seed,
        )
    raise ConfigError(f"unknown classifier kind {kind!r}")


def _grid_points(kind: str, grid: dict) -> list[dict]:
    if kind == "knn":
        ks = grid.get("k", [1])
        metrics = grid.get("metric", ["euclidean"])
        return [{"k": int(k), "metric": m} for k in sorted(ks) for m in metrics]
    if kind == "svm":
        cs = grid.get("c_reg", [1.0])
        return [{"c_reg": float(c)} for c in sorted(cs)]
    raise ConfigError(f"unknown classifier kind {kind!r}")


def cross_validate(
    f, labels, kind: str, grid: dict, folds: int, seed: int = 0
) -> tuple[dict, dict]:
    """Stratified k-fold grid search.

    Returns (best params, {param repr -> fold accuracies}); ties go to the
    smaller k / smaller C because candidates are scanned in sorted order.
    """
    x, _ = _as_matrix(f)
    y = np.asarray(labels, dtype=np.int64)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    points = _grid_points(kind, grid)
    if not points:
        raise ConfigError("empty parameter grid")
    assign = _stratified_folds(y, folds, seed)
    scores: dict[str, list[float]] = {}
    best, best_mean = None, -1.0
    for params in points:
        accs = []
        for fold in range(folds):
            tr = assign != fold
            te = ~tr
            model = _train_with_params(kind, x[tr], y[tr], params, seed)
            pred = predict(model, x[te])
            accs.append(float((pred == y[te]).mean()))
        scores[json.dumps(params, sort_keys=True)] = accs
        mean = float(np.mean(accs))
        if mean > best_mean + 1e-12:
            best, best_mean = params, mean
    return best, scores


# ---------------------------------------------------------------------------
# metrics

def evaluate(predictions, truth, n_classes: int | None = None) -> Metrics:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.shape != true.shape:
        raise DataError("predictions and truth differ in length")
    omega = n_classes or int(max(pred.max(), true.max()))
    if pred.min() < 1 or true.min() < 1 or max(pred.max(), true.max()) > omega:
        raise DataError(f"labels outside 1..{omega}")
    confusion = np.zeros((omega, omega), dtype=np.int64)
    np.add.at(confusion, (true - 1, pred - 1), 1)
    diag = np.diag(confusion).astype(np.float64)
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    recall = np.where(row > 0, 100.0 * diag / np.maximum(row, 1), 0.0)
    precision = np.where(col > 0, 100.0 * diag / np.maximum(col, 1), 0.0)
    undefined = tuple(int(c + 1) for c in np.flatnonzero(col == 0))
    return Metrics(
        confusion,
        recall,
        precision,
        float(recall.mean()),
        float(precision.mean()),
        float(100.0 * diag.sum() / len(true)),
        undefined,
    )
