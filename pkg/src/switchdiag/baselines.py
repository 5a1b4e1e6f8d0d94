"""Comparison classifiers: K-nearest neighbours, polynomial SVM and a 1-D CNN.

KNN and SVM work on whatever vectors they are given (the harness passes
encoder-mapped features). The CNN takes normalized raw 24-vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .nnet import AdamState, Conv1dParams, adam_step, conv1d_backward, conv1d_forward, dropout_mask, init_cnn
from .preprocess import NormStats, normalize


class BaselineError(ValueError):
    pass


def _as_batch(X):
    X = np.asarray(X, dtype=np.float64)
    return (X.reshape(1, -1), True) if X.ndim == 1 else (X, False)


def _class_rows(y):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    classes = tuple(int(k) for k in np.unique(y))
    return classes, np.searchsorted(np.array(classes), y)


# ---------------------------------------------------------------------------
# KNN


@dataclass(frozen=True)
class KnnModel:
    vectors: np.ndarray
    rows: np.ndarray     # class index per stored vector
    classes: tuple
    k: int


def knn_fit(vectors, labels, k: int = 10) -> KnnModel:
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] == 0:
        raise BaselineError("empty training set")
    if len(labels) != V.shape[0]:
        raise BaselineError("vectors/labels length mismatch")
    if not 1 <= k <= V.shape[0]:
        raise BaselineError(f"k must be in [1, {V.shape[0]}], got {k}")
    classes, rows = _class_rows(labels)
    return KnnModel(V.copy(), rows.astype(np.int64), classes, int(k))


def knn_predict(model: KnnModel, v):
    """Majority class of the K nearest stored vectors.

    Equal distances favour the lower stored index, equal votes the lower class.
    """
    Q, single = _as_batch(v)
    idx = kernels.knn_vote(model.vectors, model.rows, Q, model.k, len(model.classes))
    labels = np.array(model.classes)[idx]
    return int(labels[0]) if single else labels


# ---------------------------------------------------------------------------
# SVM


def poly2_features(X) -> np.ndarray:
    """Explicit map with phi(a).phi(b) = (1 + a.b)^2.

    Columns: 1, sqrt(2) x_i, x_i^2, sqrt(2) x_i x_j for i < j.
    """
    X, _ = _as_batch(X)
    n, d = X.shape
    pairs = list(combinations(range(d), 2))
    cross = np.empty((n, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        cross[:, c] = X[:, i] * X[:, j]
    r2 = np.sqrt(2.0)
    return np.hstack([np.ones((n, 1)), r2 * X, X * X, r2 * cross])


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray  # (n_classes, n_expanded)
    biases: np.ndarray   # (n_classes,)
    classes: tuple
    reg: float

    def scores(self, X) -> np.ndarray:
        return poly2_features(X) @ self.weights.T + self.biases


def svm_fit(vectors, labels, reg: float = 1e-2, epochs: int = 500) -> SvmModel:
    """One-vs-rest hinge classifiers trained by full-batch subgradient descent.

    Each binary problem minimizes ``reg/2 |w|^2 + mean(max(0, 1 - y (w.phi + b)))``
    with step size ``1 / (reg * t)``; the bias is not regularized.
    """
    if reg <= 0:
        raise BaselineError("reg must be positive")
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise BaselineError("empty training set")
    classes, rows = _class_rows(labels)
    if len(classes) < 2:
        raise BaselineError("svm needs at least 2 classes")
    Phi = poly2_features(X)
    n, p = Phi.shape
    K = len(classes)
    Y = np.where(rows[None, :] == np.arange(K)[:, None], 1.0, -1.0)  # (K, n)
    W = np.zeros((K, p))
    b = np.zeros(K)
    for t in range(1, epochs + 1):
        eta = 1.0 / (reg * t)
        margin = Y * (W @ Phi.T + b[:, None])
        active = (margin < 1.0) * Y  # (K, n)
        gW = reg * W - active @ Phi / n
        gb = -active.sum(axis=1) / n
        W = W - eta * gW
        b = b - eta * gb
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise BaselineError("svm training diverged")
    return SvmModel(W, b, classes, float(reg))


def svm_predict(model: SvmModel, v):
    """Class with the largest one-vs-rest score; ties go to the lower class."""
    X, single = _as_batch(v)
    labels = np.array(model.classes)[model.scores(X).argmax(axis=1)]
    return int(labels[0]) if single else labels


# ---------------------------------------------------------------------------
# CNN


@dataclass(frozen=True)
class CnnConfig:
    epochs: int = 300
    lr: float = 2e-4
    dropout: float = 0.2
    batch_size: int = 32
    seed: int = 0


@dataclass
class CnnModel:
    params: Conv1dParams
    classes: tuple
    norm_stats: NormStats
    config: CnnConfig

    def scores(self, X_raw) -> np.ndarray:
        X, _ = _as_batch(X_raw)
        Xn, _ = normalize(X, self.norm_stats)
        out, _ = conv1d_forward(self.params, Xn)
        return out


def _softmax_xent(scores, rows):
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = scores.shape[0]
    loss = -logp[np.arange(n), rows].mean()
    g = np.exp(logp)
    g[np.arange(n), rows] -= 1.0
    return float(loss), g / n


def cnn_loss(params: Conv1dParams, X, rows, masks=None):
    """Mean softmax cross-entropy and its gradient arrays."""
    out, tape = conv1d_forward(params, X, masks)
    loss, g = _softmax_xent(np.atleast_2d(out), rows)
    grads, _ = conv1d_backward(params, tape, g)
    return loss, grads, tape


def _cnn_masks(params: Conv1dParams, n: int, rate: float, rng):
    masks, length = [], params.input_length
    for c in params.convs:
        length = length - c.kernel + 1
        masks.append(dropout_mask((n, c.weight.shape[0], length), rate, rng))
    return masks


def cnn_fit(X_raw, labels, config: CnnConfig = CnnConfig()) -> CnnModel:
    """Mini-batch Adam on cross-entropy with dropout after each convolution.

    Inputs are min-max normalized with statistics of the training matrix.
    """
    X = np.asarray(X_raw, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise BaselineError("empty training set")
    if X.shape[1] != 24:
        raise BaselineError("cnn inputs must have length 24")
    classes, rows = _class_rows(labels)
    Xn, stats = normalize(X)
    rng = np.random.default_rng(config.seed)
    params = init_cnn(rng, n_classes=len(classes))
    state = AdamState.zeros(params.arrays())
    n = Xn.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            masks = _cnn_masks(params, sel.size, config.dropout, rng)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads, _ = cnn_loss(params, Xn[sel], rows[sel], masks)
                    new, state = adam_step(params.arrays(), grads, state, config.lr)
            except ValueError:  # non-finite activations
                loss = np.nan
            if not (np.isfinite(loss) and all(np.all(np.isfinite(a)) for a in new)):
                raise BaselineError(f"cnn training diverged at epoch {epoch}")
            params = params.with_arrays(new)
    return CnnModel(params, classes, stats, config)


def cnn_predict(model: CnnModel, x):
    X, single = _as_batch(x)
    labels = np.array(model.classes)[model.scores(X).argmax(axis=1)]
    return int(labels[0]) if single else labels
