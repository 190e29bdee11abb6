"""t-SNE embedding and logistic-regression separability of learned features."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import kernels
from .errors import DataError


@dataclass(eq=False)
class Embedding:
    coords: np.ndarray
    perplexity: float
    seed: int
    kl_divergence: float
    kl_history: list = field(default_factory=list, repr=False)


@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    l2: float
    grad_norm: float = float("nan")

    def predict_proba(self, features):
        return expit(self.decision_function(features))

    def decision_function(self, features):
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias


def _sq_distances(X):
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_affinities(X, perplexity, tol=1e-5, max_iter=200):
    """Row-stochastic Gaussian affinities whose entropy matches ``log(perplexity)``.

    Each row's precision is found by bisection on the entropy (natural log).
    """
    D = _sq_distances(np.asarray(X, dtype=np.float64))
    n = len(D)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            sw = w.sum()
            p = w / sw
            entropy = np.log(sw) + beta * np.sum(d * p)
            diff = entropy - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p
    return P


def tsne(features, perplexity: float = 30.0, iterations: int = 1000, seed: int = 0,
         learning_rate: float = 200.0, early_exaggeration: float = 12.0,
         exaggeration_iters: int = 250, n_components: int = 2) -> Embedding:
    """Exact O(n^2) t-SNE with early exaggeration, momentum and per-coordinate gains."""
    X = np.asarray(features, dtype=np.float64)
    n = len(X)
    if n < 5:
        raise ValueError(f"t-SNE needs at least 5 points, got {n}")
    if not 0 < perplexity < (n - 1) / 3:
        raise ValueError(f"perplexity {perplexity} infeasible for {n} points "
                         f"(must be below {(n - 1) / 3:.3g})")
    P = conditional_affinities(X, perplexity)
    P = np.maximum((P + P.T) / (2.0 * n), 1e-12)
    np.fill_diagonal(P, 0.0)
    P = np.ascontiguousarray(P)

    rng = np.random.default_rng(seed)
    Y = 1e-4 * rng.standard_normal((n, n_components))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = []
    for it in range(iterations):
        exaggerate = it < exaggeration_iters
        grad, kl = kernels.tsne_gradient(P * early_exaggeration if exaggerate else P, Y)
        momentum = 0.5 if it < exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = np.ascontiguousarray(Y + update - (Y + update).mean(axis=0))
        if not exaggerate:
            history.append(kl)
    _, kl = kernels.tsne_gradient(P, Y)
    return Embedding(Y, perplexity, seed, float(kl), history)


def _check_labels(labels):
    labels = np.asarray(labels).astype(np.int64).ravel()
    classes = set(np.unique(labels).tolist())
    if not classes <= {0, 1}:
        raise DataError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise DataError("both classes must be present")
    return labels


def logistic_objective(weights, bias, X, y, l2):
    """Mean negative log-likelihood + ``l2/2 * |w|^2`` and its gradient."""
    z = X @ weights + bias
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights
    r = (expit(z) - y) / len(y)
    return loss, X.T @ r + l2 * weights, r.sum()


def fit_logistic(features, labels, l2: float = 1e-2, iterations: int = 2000) -> LogisticModel:
    """L2-penalized logistic regression by full-batch gradient descent.

    The step size is the inverse of a Lipschitz bound on the gradient, so the
    objective decreases monotonically. Weights start at zero.
    """
    X = np.asarray(features, dtype=np.float64)
    y = _check_labels(labels).astype(np.float64)
    if len(X) != len(y):
        raise ValueError("features and labels differ in length")
    Xa = np.hstack([X, np.ones((len(X), 1))])
    lipschitz = 0.25 * np.linalg.norm(Xa, 2) ** 2 / len(X) + l2
    step = 1.0 / lipschitz
    w = np.zeros(X.shape[1])
    b = 0.0
    gw, gb = np.zeros_like(w), 0.0
    for _ in range(iterations):
        _, gw, gb = logistic_objective(w, b, X, y, l2)
        w = w - step * gw
        b = b - step * gb
    _, gw, gb = logistic_objective(w, b, X, y, l2)
    return LogisticModel(w, float(b), l2, float(np.sqrt(gw @ gw + gb * gb)))


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    labels = _check_labels(labels)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(model: LogisticModel, features, labels) -> float:
    return auc_score(model.decision_function(features), labels)


def admission_scores(scores, hadm_ids, labels):
    """Average patch scores per admission; returns (scores, labels) in admission order."""
    hadm_ids = np.asarray(hadm_ids)
    uniq, inverse = np.unique(hadm_ids, return_inverse=True)
    sums = np.bincount(inverse, weights=np.asarray(scores, dtype=np.float64))
    counts = np.bincount(inverse)
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inverse[::-1]] = np.arange(len(inverse))[::-1]
    return sums / counts, np.asarray(labels)[first]


def nearest_neighbor_accuracy(coords, labels) -> float:
    """Leave-one-out 1-NN label agreement in an embedding."""
    D = _sq_distances(np.asarray(coords, dtype=np.float64))
    np.fill_diagonal(D, np.inf)
    labels = np.asarray(labels)
    return float(np.mean(labels[np.argmin(D, axis=1)] == labels))
