"""Prototype head: class centers, normalized distances, learned decision radii,
radius-gated pseudo-labels and corrected centers.

All distances are squared Euclidean. The radius gate compares the
column-normalized distance; the class softmax uses raw squared distances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .nnet import GradientTape, MlpParams, mlp_forward, sigmoid, softplus


class ProtoError(ValueError):
    pass


@dataclass(frozen=True)
class Prototypes:
    """Centers stacked row-wise; ``classes[i]`` labels row i (ascending)."""

    classes: tuple
    centers: np.ndarray
    counts: tuple

    def __post_init__(self):
        c = np.array(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != len(self.classes):
            raise ProtoError("centers must be (n_classes, dim)")
        if not np.all(np.isfinite(c)):
            raise ProtoError("non-finite center")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "classes", tuple(int(k) for k in self.classes))
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def center(self, k: int) -> np.ndarray:
        return self.centers[self.classes.index(int(k))]

    def index_of(self, labels) -> np.ndarray:
        lookup = {k: i for i, k in enumerate(self.classes)}
        try:
            return np.array([lookup[int(y)] for y in labels], dtype=np.int64)
        except KeyError as e:
            raise ProtoError(f"class {e.args[0]} has no prototype") from None

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "centers": self.centers.tolist(), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "Prototypes":
        return cls(tuple(d["classes"]), np.array(d["centers"], dtype=np.float64), tuple(d["counts"]))


@dataclass(frozen=True)
class DistanceTable:
    raw: np.ndarray         # (M, K) squared distances
    normalized: np.ndarray  # (M, K) raw / column mean

    @property
    def M(self) -> int:
        return self.raw.shape[0]


@dataclass
class RadiusDecision:
    radii: np.ndarray   # (K,) one per prototype row
    stats: np.ndarray   # (K, 5) max, mean, variance, skewness, kurtosis
    logits: np.ndarray = field(default=None, repr=False)
    tape: GradientTape | None = field(default=None, repr=False)


@dataclass(frozen=True)
class PseudoLabel:
    index: int
    label: int
    in_radius: bool


def _as_matrix(mapped) -> np.ndarray:
    V = np.asarray(mapped, dtype=np.float64)
    return V.reshape(0, 0) if V.size == 0 and V.ndim < 2 else V


def compute_prototypes(vectors, labels, classes: Sequence[int] | None = None) -> Prototypes:
    """Per-class mean of the mapped vectors."""
    V = _as_matrix(vectors)
    y = np.asarray(labels, dtype=np.int64)
    if V.shape[0] != y.size:
        raise ProtoError("vectors/labels length mismatch")
    present = sorted(set(y.tolist()))
    classes = present if classes is None else sorted(int(k) for k in classes)
    centers, counts = [], []
    for k in classes:
        sel = y == k
        n = int(sel.sum())
        if n == 0:
            raise ProtoError(f"class {k} has no samples")
        centers.append(V[sel].sum(axis=0) / n)
        counts.append(n)
    return Prototypes(tuple(classes), np.array(centers).reshape(len(classes), V.shape[1]), tuple(counts))


def normalized_distances(unlabeled_mapped, prototypes: Prototypes) -> DistanceTable:
    V = _as_matrix(unlabeled_mapped)
    if V.shape[0] < 1:
        raise ProtoError("need at least one unlabeled vector")
    raw = kernels.sq_dists(V, prototypes.centers)
    mean = raw.mean(axis=0)
    bad = np.flatnonzero(mean <= 0.0)
    if bad.size:
        raise ProtoError(f"degenerate class column for class {prototypes.classes[bad[0]]}")
    return DistanceTable(raw, raw / mean)


def distance_stats(column) -> np.ndarray:
    """Max, mean and population variance / skewness / (non-excess) kurtosis.

    A zero-variance column has skewness and kurtosis defined as 0.
    """
    d = np.asarray(column, dtype=np.float64).reshape(-1)
    if d.size < 2:
        raise ProtoError("distance_stats needs at least 2 values")
    mu = d.mean()
    c = d - mu
    m2 = np.mean(c ** 2)
    if m2 > 0.0:
        skew = np.mean(c ** 3) / m2 ** 1.5
        kurt = np.mean(c ** 4) / m2 ** 2
    else:
        skew = kurt = 0.0
    return np.array([d.max(), mu, m2, skew, kurt])


def predict_radii(radius_params: MlpParams, table: DistanceTable) -> RadiusDecision:
    """One shared network maps each class's distance statistics to a radius."""
    if radius_params.sizes[0] != 5:
        raise ProtoError("radius network must take 5 inputs")
    stats = np.stack([distance_stats(table.normalized[:, k]) for k in range(table.normalized.shape[1])])
    if not np.all(np.isfinite(stats)):
        raise ProtoError("non-finite distance statistics")
    logits, tape = mlp_forward(radius_params, stats)
    logits = logits[:, 0]
    return RadiusDecision(softplus(logits), stats, logits, tape)


def classify(v, prototypes: Prototypes):
    """Softmax over negative squared distances; argmax ties go to the lowest class."""
    V = np.asarray(v, dtype=np.float64)
    single = V.ndim == 1
    V2 = V.reshape(1, -1) if single else V
    if not np.all(np.isfinite(V2)):
        raise ValueError("non-finite embedding")
    if not prototypes.classes:
        raise ProtoError("no prototypes")
    P = kernels.neg_sq_softmax(V2, prototypes.centers)
    labels = np.array(prototypes.classes)[P.argmax(axis=1)]
    if single:
        return P[0], int(labels[0])
    return P, labels


def assign_pseudo_labels(table: DistanceTable, radii, unlabeled_mapped, prototypes: Prototypes) -> list:
    """Label each unlabeled vector by the softmax argmax; gate on its own class radius."""
    r = radii.radii if isinstance(radii, RadiusDecision) else np.asarray(radii, dtype=np.float64)
    V = _as_matrix(unlabeled_mapped)
    if V.shape[0] != table.M:
        raise ProtoError("table and unlabeled set disagree on M")
    # argmax of softmax(-d) == argmin of d; np.argmin keeps the first of ties
    idx = table.raw.argmin(axis=1)
    inside = table.normalized[np.arange(table.M), idx] < r[idx]
    return [PseudoLabel(n, prototypes.classes[i], bool(g)) for n, (i, g) in enumerate(zip(idx, inside))]


def pseudo_arrays(pseudo: Sequence[PseudoLabel], prototypes: Prototypes):
    """(class row index, in-radius flag) arrays for a pseudo-label list."""
    rows = prototypes.index_of([p.label for p in pseudo]) if pseudo else np.zeros(0, dtype=np.int64)
    gate = np.array([p.in_radius for p in pseudo], dtype=bool)
    return rows, gate


def update_prototypes(labeled_vectors, labeled_labels, pseudo_vectors, pseudo: Sequence[PseudoLabel],
                      classes: Sequence[int] | None = None) -> Prototypes:
    """Recompute centers from labeled vectors plus in-radius pseudo-labeled vectors."""
    base = compute_prototypes(labeled_vectors, labeled_labels, classes)
    U = _as_matrix(pseudo_vectors)
    keep = [(i, p) for i, p in enumerate(pseudo) if p.in_radius]
    if not keep:
        return base
    V = _as_matrix(labeled_vectors)
    y = np.asarray(labeled_labels, dtype=np.int64)
    centers, counts = [], []
    for row, k in enumerate(base.classes):
        members = [i for i, p in keep if p.label == k]
        n_lab = base.counts[row]
        if not members:
            centers.append(base.centers[row])
            counts.append(n_lab)
            continue
        total = V[y == k].sum(axis=0) + U[members].sum(axis=0)
        n = n_lab + len(members)
        centers.append(total / n)
        counts.append(n)
    return Prototypes(base.classes, np.array(centers), tuple(counts))


def radius_surrogate_grad(grad_centers, unlabeled_mapped, table: DistanceTable, rows,
                          corrected: Prototypes, radii, tau: float) -> np.ndarray:
    """Straight-through dL/dr_k for the hard radius gate.

    The forward pass used hard membership w_n = 1[d~ < r]. The backward pass
    substitutes sigmoid((r_k - d~_nk) / tau) for w_n, giving
    dc'_k/dw_n = (v_n - c'_k) / N_k with N_k the corrected count.
    """
    r = radii.radii if isinstance(radii, RadiusDecision) else np.asarray(radii)
    U = _as_matrix(unlabeled_mapped)
    M = U.shape[0]
    if M == 0:
        return np.zeros_like(r)
    d = table.normalized[np.arange(M), rows]
    s = sigmoid((r[rows] - d) / tau)
    dw_dr = s * (1.0 - s) / tau
    counts = np.asarray(corrected.counts, dtype=np.float64)
    dc_dw = (U - corrected.centers[rows]) / counts[rows][:, None]
    per_sample = np.einsum("nd,nd->n", grad_centers[rows], dc_dw) * dw_dr
    return np.bincount(rows, weights=per_sample, minlength=r.size)
