"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module; selected by
``switchdiag.kernels`` when the extension is unavailable or disabled.
"""
import numpy as np


def sq_dists(A, B):
    """Squared Euclidean distances, rows of A against rows of B."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def neg_sq_softmax(V, C):
    """Row-wise softmax over negative squared distances to the centers."""
    s = -sq_dists(V, C)
    s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def proto_xent(V, C, y):
    """Mean cross-entropy of softmax(-||v - c_k||^2) against class indices y.

    Returns (loss, dL/dV, dL/dC). An empty batch gives zero loss and zero
    gradients.
    """
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    T = V.shape[0]
    if T == 0:
        return 0.0, np.zeros_like(V), np.zeros_like(C)
    diff = V[:, None, :] - C[None, :, :]
    s = -np.einsum("nkd,nkd->nk", diff, diff)
    smax = s.max(axis=1, keepdims=True)
    e = np.exp(s - smax)
    z = e.sum(axis=1, keepdims=True)
    logp = s - smax - np.log(z)
    rows = np.arange(T)
    loss = -logp[rows, y].sum() / T
    g = e / z
    g[rows, y] -= 1.0
    g /= T
    # ds/dv = -2 (v - c), ds/dc = +2 (v - c)
    gd = g[:, :, None] * diff
    gV = -2.0 * gd.sum(axis=1)
    gC = 2.0 * gd.sum(axis=0)
    return float(loss), gV, gC


def knn_vote(train, train_y, queries, k, n_classes):
    """k-nearest-neighbour majority vote over class indices 0..n_classes-1.

    Distance ties go to the lower training index; vote ties to the lower class.
    """
    D = sq_dists(queries, train)
    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    votes = np.zeros((D.shape[0], n_classes), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(D.shape[0]), k), np.asarray(train_y)[order].ravel()), 1)
    return votes.argmax(axis=1).astype(np.int64)
