"""Primitives for l1-regularized binary logistic regression.

Conventions used throughout the package: feature matrices are (n, d) float64
arrays, labels are {-1.0, +1.0}, and the per-shard loss is the *mean* over
the shard,

    f(w; X, y) = (1/n) sum_j ln(1 + exp(-y_j <w, a_j>)).
"""

from __future__ import annotations

import numpy as np


def _check_pair(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"feature matrix must be 2-d, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError(f"labels of shape {y.shape} do not match features {X.shape}")
    if y.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be -1 or +1")
    return X, y


def _check_model(w, X):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != X.shape[1]:
        raise ValueError(f"model of shape {w.shape} does not match features {X.shape}")
    return w


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_loss(w, X, y):
    """Mean logistic loss of model w on (X, y)."""
    X, y = _check_pair(X, y)
    w = _check_model(w, X)
    return float(np.logaddexp(0.0, -y * (X @ w)).mean())


def logistic_grad(w, X, y):
    """Gradient of the mean logistic loss: (1/n) sum_j -y_j s(-y_j z_j) a_j."""
    X, y = _check_pair(X, y)
    w = _check_model(w, X)
    s = sigmoid(-y * (X @ w))
    return X.T @ (-y * s) / y.shape[0]


def clip_to_norm(v, bound):
    """Project v onto the l2 ball of radius bound (leaves shorter vectors as-is)."""
    if bound <= 0.0:
        raise ValueError(f"clip bound must be positive, got {bound}")
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= bound:
        return v
    return v * (bound / norm)


def prox_l1(v, thresh):
    """Soft-thresholding, the proximal operator of thresh * ||.||_1."""
    if thresh < 0.0:
        raise ValueError(f"threshold must be nonnegative, got {thresh}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def accuracy(w, X, y):
    """Fraction of correct sign predictions; a score of exactly 0 predicts +1."""
    X, y = _check_pair(X, y)
    w = _check_model(w, X)
    pred = np.where(X @ w >= 0.0, 1.0, -1.0)
    return float(np.mean(pred == y))
