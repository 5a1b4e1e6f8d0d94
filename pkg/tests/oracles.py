"""Brute-force reference implementations in plain Python loops.

Independent of the package kernels: no numpy vector arithmetic beyond
element access, so any agreement is not shared-code coincidence.
"""
import math

import numpy as np


def sqdist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def centers(V, y, classes):
    out = []
    for k in classes:
        members = [V[i] for i in range(len(y)) if y[i] == k]
        out.append([sum(float(m[d]) for m in members) / len(members) for d in range(len(V[0]))])
    return np.array(out)


def normalized(U, C):
    M, K = len(U), len(C)
    raw = [[sqdist(U[n], C[k]) for k in range(K)] for n in range(M)]
    means = [sum(raw[n][k] for n in range(M)) / M for k in range(K)]
    return np.array(raw), np.array([[raw[n][k] / means[k] for k in range(K)] for n in range(M)])


def softmax_probs(v, C):
    d = [sqdist(v, c) for c in C]
    lo = min(d)
    e = [math.exp(-(x - lo)) for x in d]
    z = math.fsum(e)
    return np.array([x / z for x in e])


def pseudo(U, C, radii, classes):
    """(label, in_radius) per unlabeled vector."""
    raw, norm = normalized(U, C)
    out = []
    for n in range(len(U)):
        best = 0
        for k in range(1, len(C)):
            if raw[n][k] < raw[n][best]:
                best = k
        out.append((classes[best], norm[n][best] < radii[best]))
    return out


def corrected_centers(V, y, U, labels, inside, classes):
    out = []
    for k in classes:
        members = [V[i] for i in range(len(y)) if y[i] == k]
        members += [U[n] for n in range(len(U)) if labels[n] == k and inside[n]]
        out.append([sum(float(m[d]) for m in members) / len(members) for d in range(len(V[0]))])
    return np.array(out)


def random_instance(rng, dim=8):
    """Small episode: labeled vectors covering K classes plus an unlabeled pool."""
    K = int(rng.integers(1, 8))
    classes = sorted(rng.choice(np.arange(1, 8), size=K, replace=False).tolist())
    n_lab = int(rng.integers(K, 21))
    y = np.array(classes + rng.choice(classes, size=n_lab - K).tolist())
    V = rng.standard_normal((n_lab, dim))
    M = int(rng.integers(2, 21))
    U = rng.standard_normal((M, dim)) * 1.5
    radii = rng.uniform(0.0, 2.0, K)
    return V, y, U, classes, radii
