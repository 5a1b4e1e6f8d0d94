import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import blobs
from switchdiag.baselines import (BaselineError, CnnConfig, cnn_fit, cnn_predict, knn_fit, knn_predict,
                                  poly2_features, svm_fit, svm_predict)

# ---------------------------------------------------------------------------
# KNN


def _knn_oracle(train, labels, q, k):
    d = [(sum((a - b) ** 2 for a, b in zip(t, q)), i) for i, t in enumerate(train)]
    d.sort()
    votes = {}
    for _, i in d[:k]:
        votes[labels[i]] = votes.get(labels[i], 0) + 1
    best = max(votes.values())
    return min(c for c, v in votes.items() if v == best)


def test_knn_k1_returns_stored_label(rng):
    V = rng.standard_normal((10, 8))
    y = rng.integers(1, 8, 10)
    m = knn_fit(V, y, k=1)
    for i in range(10):
        assert knn_predict(m, V[i]) == y[i]


def test_knn_all_same_label(rng):
    m = knn_fit(rng.standard_normal((6, 3)), [4] * 6, k=6)
    assert knn_predict(m, rng.standard_normal(3) * 100) == 4


@pytest.mark.parametrize("seed", range(5))
def test_knn_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((20, 4))
    y = rng.integers(1, 8, 20)
    Q = rng.standard_normal((100, 4))
    got = knn_predict(knn_fit(V, y, k=5), Q)
    assert got.tolist() == [_knn_oracle(V, y, q, 5) for q in Q]


def test_knn_tie_breaks():
    train = np.array([[1.0], [-1.0], [3.0], [-3.0]])
    # equal distances: the lower stored index wins
    assert knn_predict(knn_fit(train, [5, 2, 2, 2], k=1), [0.0]) == 5
    # one vote each: the lower class wins
    assert knn_predict(knn_fit(train, [5, 2, 2, 2], k=2), [0.0]) == 2


@given(st.integers(0, 10**6))
def test_knn_permutation_invariant_without_ties(seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((15, 3))
    y = rng.integers(1, 4, 15)
    q = rng.standard_normal((10, 3))
    p = rng.permutation(15)
    # odd k with 2 classes cannot tie votes; continuous draws do not tie distances
    y2 = (y % 2) + 1
    a = knn_predict(knn_fit(V, y2, k=5), q)
    b = knn_predict(knn_fit(V[p], y2[p], k=5), q)
    assert np.array_equal(a, b)


def test_knn_errors(rng):
    with pytest.raises(BaselineError):
        knn_fit(np.zeros((0, 3)), [], k=1)
    with pytest.raises(BaselineError):
        knn_fit(rng.standard_normal((3, 2)), [1, 2, 3], k=4)


# ---------------------------------------------------------------------------
# SVM


def test_poly2_kernel_identity(rng):
    a, b = rng.standard_normal((2, 8))
    Pa, Pb = poly2_features(a)[0], poly2_features(b)[0]
    assert Pa.size == 45
    assert Pa @ Pb == pytest.approx((1.0 + a @ b) ** 2, rel=1e-12)


def test_svm_separable_1d():
    X = np.array([[-1.0], [-1.1], [-0.9], [1.0], [1.1], [0.9]])
    y = [1, 1, 1, 2, 2, 2]
    m = svm_fit(X, y)
    assert svm_predict(m, X).tolist() == y
    assert np.array_equal(m.scores(X), m.scores(X))


XOR_X = np.array([[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]])
XOR_Y = np.array([1, 1, 2, 2])


def test_svm_xor_with_degree2():
    m = svm_fit(XOR_X, XOR_Y)
    assert svm_predict(m, XOR_X).tolist() == XOR_Y.tolist()


def test_linear_models_cannot_solve_xor():
    # every linear separator of the 4 points: sign patterns realizable by w.x + b
    best = 0.0
    rng = np.random.default_rng(0)
    for w in rng.standard_normal((20000, 3)):
        pred = np.where(XOR_X @ w[:2] + w[2] > 0, 1, 2)
        best = max(best, float(np.mean(pred == XOR_Y)))
    assert best == 0.75
    # exhaustive: no labeling consistent with XOR is linearly separable
    for signs in itertools.product([-1, 1], repeat=3):
        w = np.array(signs[:2], dtype=float)
        assert np.mean(np.where(XOR_X @ w + signs[2] * 0.5 > 0, 1, 2) == XOR_Y) <= 0.75


def test_svm_scores_invariant_to_duplication(rng):
    X = rng.standard_normal((30, 3))
    y = rng.integers(1, 4, 30)
    a = svm_fit(X, y, epochs=100)
    b = svm_fit(np.vstack([X, X]), np.r_[y, y], epochs=100)
    Q = rng.standard_normal((10, 3))
    assert np.allclose(a.scores(Q), b.scores(Q), rtol=1e-10, atol=1e-10)


def test_svm_single_class_error(rng):
    with pytest.raises(BaselineError, match="2 classes"):
        svm_fit(rng.standard_normal((5, 2)), [3] * 5)


def test_svm_on_blobs(rng):
    X, y = blobs(rng, 20, classes=(1, 2, 3, 4))
    V = X[:, :8] / 10
    m = svm_fit(V, y)
    assert np.mean(svm_predict(m, V) == y) == 1.0


# ---------------------------------------------------------------------------
# CNN


def test_cnn_zero_epochs_is_initialization(rng):
    X, y = blobs(rng, 5)
    a = cnn_fit(X, y, CnnConfig(epochs=0, seed=3))
    b = cnn_fit(X, y, CnnConfig(epochs=0, seed=3))
    assert np.array_equal(cnn_predict(a, X), cnn_predict(b, X))
    assert np.array_equal(a.scores(X), b.scores(X))
    c = cnn_fit(X, y, CnnConfig(epochs=0, seed=4))
    assert not np.array_equal(a.scores(X), c.scores(X))


def test_cnn_deterministic_per_seed(rng):
    X, y = blobs(rng, 5)
    cfg = CnnConfig(epochs=3, seed=1)
    assert np.array_equal(cnn_fit(X, y, cfg).scores(X), cnn_fit(X, y, cfg).scores(X))


def test_cnn_separable_blobs():
    accs = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X, y = blobs(rng, 40, spread=0.3)
        train = np.r_[0:10, 40:50, 80:90]
        test = np.setdiff1d(np.arange(120), train)
        m = cnn_fit(X[train], y[train], CnnConfig(epochs=150, seed=seed))
        accs.append(float(np.mean(cnn_predict(m, X[test]) == y[test])))
    assert min(accs) >= 0.9, accs


def test_cnn_rejects_wrong_length(rng):
    with pytest.raises(BaselineError):
        cnn_fit(rng.random((4, 20)), [1, 2, 1, 2])


def test_cnn_divergence_is_reported(rng):
    X, y = blobs(rng, 5)
    with pytest.raises(BaselineError, match="diverged"):
        cnn_fit(X, y, CnnConfig(epochs=20, lr=1e300))
