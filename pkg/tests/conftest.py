import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from switchdiag.features import ConditionLabel, FeatureVector, LabeledSample, UnlabeledSample

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_labeled(X, y, prefix="s"):
    return [LabeledSample(FeatureVector(x), ConditionLabel(int(k)), f"{prefix}{i}") for i, (x, k) in enumerate(zip(X, y))]


def make_unlabeled(X, prefix="u"):
    return [UnlabeledSample(FeatureVector(x), f"{prefix}{i}") for i, x in enumerate(X)]


def blobs(rng, n_per_class, classes=(1, 2, 3), spread=0.05, sep=1.0):
    """Well-separated Gaussian blobs in 24 dimensions; returns (X, y)."""
    centers = {k: rng.standard_normal(24) * sep * 3 for k in classes}
    X, y = [], []
    for k in classes:
        X.append(centers[k] + spread * rng.standard_normal((n_per_class, 24)))
        y += [k] * n_per_class
    return np.vstack(X), np.array(y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
