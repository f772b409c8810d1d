"""Four from-scratch binary distinguishers with probability scores.

  LR   L2-regularized logistic regression, damped Newton iterations
  KNN  k-nearest-neighbour vote fraction, Euclidean distance, k=5
  RF   30-tree random forest, all features per split, Gini criterion
  MLP  one 200-unit rectified-linear hidden layer, logistic output,
       mini-batch training with adaptive per-parameter steps

All four consume either a FeatureMatrix (columns and labels carried along)
or a plain (X, y) array pair. Scores are always in [0, 1]; the in-group
class is labelled 1. Models are immutable records serializable to a
versioned JSON blob; floats survive the round trip exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .seeds import rng_for

__all__ = [
    "ClassifierError",
    "TrainedModel",
    "gini",
    "train_lr",
    "train_knn",
    "train_rf",
    "train_mlp",
    "mlp_init_params",
    "mlp_loss_and_grads",
    "lr_loss_and_grad",
    "predict_scores",
    "save_model",
    "load_model",
]

MODEL_KINDS = ("LR", "KNN", "RF", "MLP")


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class TrainedModel:
    """Immutable learned state plus the feature columns it expects."""

    kind: str
    params: dict
    feature_columns: tuple | None = None
    scaler: tuple | None = None  # (means, stds) applied before scoring

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ClassifierError(f"unknown model kind: {self.kind}")


def _resolve_xy(X, y):
    """Accept a FeatureMatrix or an (array, labels) pair."""
    columns = None
    if y is None:
        if not (hasattr(X, "rows") and hasattr(X, "labels")):
            raise ClassifierError("labels required for plain array input")
        columns = tuple(X.columns)
        X, y = X.rows, X.labels
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ClassifierError("feature matrix must be 2-D")
    if y.shape != (X.shape[0],):
        raise ClassifierError("label vector does not match row count")
    if not np.isfinite(X).all():
        raise ClassifierError("non-finite feature values")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ClassifierError("labels must be 0/1")
    return X, y, columns


def _require_both_classes(y):
    if y.min() == y.max():
        raise ClassifierError("training labels contain a single class")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- logistic regression ---------------------------------------------------

def lr_loss_and_grad(w, b, X, y, l2_strength):
    """Mean logistic loss plus (l2/2)*|w|^2, with its exact gradient."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    loss += 0.5 * l2_strength * float(w @ w)
    p = _sigmoid(z)
    gw = X.T @ (p - y) / y.size + l2_strength * w
    gb = float(np.mean(p - y))
    return loss, gw, gb


def train_lr(X, y=None, l2_strength=1e-3, tol=1e-4, max_iter=1000):
    """Damped Newton on the convex objective, zero start, stopping when the
    full gradient norm drops to tol."""
    X, y, columns = _resolve_xy(X, y)
    _require_both_classes(y)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    loss, gw, gb = lr_loss_and_grad(w, b, X, y, l2_strength)
    for _ in range(max_iter):
        grad = np.concatenate([gw, [gb]])
        if np.linalg.norm(grad) <= tol:
            break
        p = _sigmoid(X @ w + b)
        r = np.maximum(p * (1.0 - p), 1e-12)
        Xb = np.hstack([X, np.ones((n, 1))])
        hess = (Xb * r[:, None]).T @ Xb / n
        hess[:d, :d] += l2_strength * np.eye(d)
        hess += 1e-10 * np.eye(d + 1)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(50):
            w2 = w - t * step[:d]
            b2 = b - t * step[d]
            new_loss, gw2, gb2 = lr_loss_and_grad(w2, b2, X, y, l2_strength)
            if new_loss <= loss - 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        w, b, loss, gw, gb = w2, b2, new_loss, gw2, gb2
    return TrainedModel(
        kind="LR", params={"w": w, "b": float(b)}, feature_columns=columns
    )


# --- k nearest neighbours --------------------------------------------------

def train_knn(X, y=None, k=5):
    X, y, columns = _resolve_xy(X, y)
    if X.shape[0] < k:
        raise ClassifierError(f"need at least k={k} training rows")
    return TrainedModel(
        kind="KNN",
        params={"X": X, "y": y, "k": int(k)},
        feature_columns=columns,
    )


def _knn_score(params, x):
    diff = params["X"] - x
    dist = np.sum(diff * diff, axis=1)
    order = np.argsort(dist, kind="stable")  # distance ties keep row order
    return float(np.mean(params["y"][order[: params["k"]]]))


# --- random forest ---------------------------------------------------------

def gini(labels) -> float:
    """Gini impurity of a 0/1 label multiset."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        return 0.0
    p = float(np.mean(labels))
    return 2.0 * p * (1.0 - p)


def _best_split(X, y):
    """Best (feature, threshold) by Gini decrease; thresholds are midpoints
    between consecutive distinct values; ties keep the lowest feature index
    and then the lowest threshold. Returns None on a pure or constant node."""
    n, d = X.shape
    parent = gini(y)
    best_gain, best_f, best_thr = 0.0, None, None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        sv = X[order, f]
        sy = y[order]
        cuts = np.nonzero(sv[1:] > sv[:-1])[0]
        if cuts.size == 0:
            continue
        pos = np.cumsum(sy)
        left_n = cuts + 1.0
        right_n = n - left_n
        left_p = pos[cuts] / left_n
        right_p = (pos[-1] - pos[cuts]) / right_n
        children = (
            left_n * 2.0 * left_p * (1.0 - left_p)
            + right_n * 2.0 * right_p * (1.0 - right_p)
        ) / n
        gains = parent - children
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = float(gains[i])
            best_f = f
            lo, hi = float(sv[cuts[i]]), float(sv[cuts[i] + 1])
            # The midpoint of two adjacent floats can round up to hi, which
            # would leave the right side empty and the node stuck; fall back
            # to lo so x <= thr always separates the two values.
            mid = 0.5 * (lo + hi)
            best_thr = mid if mid < hi else lo
    if best_f is None or best_gain <= 0.0:
        return None
    return best_f, best_thr


def _grow_tree(X, y):
    if np.all(y == y[0]):
        return {"leaf": float(y[0])}
    split = _best_split(X, y)
    if split is None:
        return {"leaf": float(np.mean(y))}
    f, thr = split
    left = X[:, f] <= thr
    return {
        "feature": int(f),
        "threshold": thr,
        "left": _grow_tree(X[left], y[left]),
        "right": _grow_tree(X[~left], y[~left]),
    }


def _tree_score(node, x):
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]


def train_rf(X, y=None, n_trees=30, seed=0, bootstrap=True):
    """Forest of purity-grown Gini trees on n-sized bootstrap resamples;
    bootstrap=False with n_trees=1 gives the deterministic single tree."""
    X, y, columns = _resolve_xy(X, y)
    _require_both_classes(y)
    n = X.shape[0]
    trees = []
    for t in range(n_trees):
        if bootstrap:
            idx = rng_for(seed, "tree", t).integers(0, n, size=n)
            trees.append(_grow_tree(X[idx], y[idx]))
        else:
            trees.append(_grow_tree(X, y))
    return TrainedModel(
        kind="RF", params={"trees": trees}, feature_columns=columns
    )


# --- multi-layer perceptron ------------------------------------------------

def mlp_init_params(d, hidden, seed):
    rng = rng_for(seed, "init")
    return {
        "W1": rng.normal(0.0, math.sqrt(2.0 / d), size=(d, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0.0, math.sqrt(1.0 / hidden), size=hidden),
        "b2": 0.0,
    }


def mlp_loss_and_grads(params, X, y):
    """Mean cross-entropy of the 1-hidden-layer net and its exact gradients."""
    z1 = X @ params["W1"] + params["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["W2"] + params["b2"]
    loss = float(np.mean(np.logaddexp(0.0, z2) - y * z2))
    dz2 = (_sigmoid(z2) - y) / y.size
    gW2 = a1.T @ dz2
    gb2 = float(np.sum(dz2))
    da1 = np.outer(dz2, params["W2"])
    dz1 = da1 * (z1 > 0.0)
    gW1 = X.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def train_mlp(
    X,
    y=None,
    hidden=200,
    seed=0,
    learning_rate=1e-3,
    batch_size=32,
    max_epochs=200,
    patience=10,
    scaler=None,
):
    """Mini-batch training with adaptive per-parameter steps (first and
    second moment averages, bias-corrected), epoch cap 200, stopping after
    10 epochs without improvement of the full-data loss.

    Expects standardized inputs; a large column mean only draws a warning
    because the net still trains, just worse.
    """
    X, y, columns = _resolve_xy(X, y)
    _require_both_classes(y)
    if np.max(np.abs(X.mean(axis=0))) > 0.5:
        warnings.warn("input does not look standardized (|column mean| > 0.5)")
    n, d = X.shape
    params = mlp_init_params(d, hidden, seed)
    moment1 = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    moment2 = {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = math.inf
    wait = 0
    for epoch in range(max_epochs):
        order = rng_for(seed, "epoch", epoch).permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            _, grads = mlp_loss_and_grads(params, X[batch], y[batch])
            step += 1
            for key, g in grads.items():
                moment1[key] = beta1 * moment1[key] + (1.0 - beta1) * g
                moment2[key] = beta2 * moment2[key] + (1.0 - beta2) * np.square(g)
                m_hat = moment1[key] / (1.0 - beta1**step)
                v_hat = moment2[key] / (1.0 - beta2**step)
                params[key] = params[key] - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        loss, _ = mlp_loss_and_grads(params, X, y)
        if loss < best - 1e-6:
            best = loss
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    params["b2"] = float(params["b2"])
    return TrainedModel(
        kind="MLP", params=params, feature_columns=columns, scaler=scaler
    )


# --- scoring ---------------------------------------------------------------

def _rows_for(model: TrainedModel, X) -> np.ndarray:
    if hasattr(X, "select") and model.feature_columns is not None:
        X = X.select(model.feature_columns).rows
    elif hasattr(X, "rows"):
        X = X.rows
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if model.feature_columns is not None and arr.shape[1] != len(model.feature_columns):
        raise ClassifierError(
            f"expected {len(model.feature_columns)} columns, got {arr.shape[1]}"
        )
    if not np.isfinite(arr).all():
        raise ClassifierError("non-finite feature values")
    if model.scaler is not None:
        means, stds = model.scaler
        arr = (arr - np.asarray(means)) / np.asarray(stds)
    return arr


def predict_scores(model: TrainedModel, X) -> np.ndarray:
    """One in-probability per row, deterministic given the model.

    Each row is scored on its own so a batch and a row-by-row sweep
    produce bit-identical numbers.
    """
    arr = _rows_for(model, X)
    if model.kind == "LR":
        w, b = model.params["w"], model.params["b"]
        return _sigmoid(np.array([float(x @ w) + b for x in arr]))
    if model.kind == "KNN":
        return np.array([_knn_score(model.params, x) for x in arr])
    if model.kind == "RF":
        trees = model.params["trees"]
        return np.array(
            [np.mean([_tree_score(t, x) for t in trees]) for x in arr]
        )
    p = model.params
    z2 = np.array(
        [
            float(np.maximum(x @ p["W1"] + p["b1"], 0.0) @ p["W2"]) + p["b2"]
            for x in arr
        ]
    )
    return _sigmoid(z2)


# --- persistence -----------------------------------------------------------

def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__array__": value.tolist()}
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_encode(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__array__" in value and len(value) == 1:
            return np.asarray(value["__array__"], dtype=np.float64)
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def save_model(model: TrainedModel, path) -> None:
    blob = {
        "format": "aggmia-model",
        "version": 1,
        "kind": model.kind,
        "feature_columns": list(model.feature_columns)
        if model.feature_columns is not None
        else None,
        "scaler": [list(map(float, s)) for s in model.scaler]
        if model.scaler is not None
        else None,
        "params": _encode(model.params),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format") != "aggmia-model" or blob.get("version") != 1:
        raise ClassifierError("unrecognized model blob")
    params = _decode(blob["params"])
    if blob["kind"] == "KNN":
        params["k"] = int(params["k"])
    return TrainedModel(
        kind=blob["kind"],
        params=params,
        feature_columns=tuple(blob["feature_columns"])
        if blob["feature_columns"] is not None
        else None,
        scaler=tuple(np.asarray(s, dtype=np.float64) for s in blob["scaler"])
        if blob["scaler"] is not None
        else None,
    )
