"""Robust-learning training loop.

Each epoch maps support, query and unlabeled vectors through the encoder,
builds class centers from the support set, gates unlabeled samples with the
learned radii, corrects the centers with in-radius pseudo-labels, then
minimizes ``L_s + lam * L_p + mu * L_u`` for the encoder while the radius
network follows ``L_s`` alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .features import ConditionLabel, EpisodeSplit, FeatureVector, labels_of, stack
from .nnet import (AdamState, MlpParams, adam_step, dropout_mask, init_mlp, mlp_backward,
                   mlp_forward, sigmoid)
from .preprocess import NormStats, normalize
from .proto import (Prototypes, assign_pseudo_labels, classify, compute_prototypes,
                    normalized_distances, predict_radii, pseudo_arrays, radius_surrogate_grad,
                    update_prototypes)

SCHEMA_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_encoder: float = 1e-3
    lr_radius: float = 1e-3
    lam: float = 1.0
    mu: float = 0.5
    perturb_sigma: float = 0.05
    dropout_theta: float = 0.2
    seed: int = 0
    tol: float = 1e-6
    patience: int = 10
    tau: float = 0.1
    use_encoder: bool = True
    use_radius: bool = True
    encoder_sizes: tuple = (24, 48, 12, 8)
    radius_sizes: tuple = (5, 16, 1)

    def __post_init__(self):
        object.__setattr__(self, "encoder_sizes", tuple(int(s) for s in self.encoder_sizes))
        object.__setattr__(self, "radius_sizes", tuple(int(s) for s in self.radius_sizes))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr_encoder <= 0 or self.lr_radius <= 0:
            raise ValueError("learning rates must be positive")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("loss weights must be non-negative")
        if self.perturb_sigma < 0:
            raise ValueError("perturb_sigma must be non-negative")
        if not 0.0 <= self.dropout_theta < 1.0:
            raise ValueError("dropout_theta must be in [0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.radius_sizes[0] != 5 or self.radius_sizes[-1] != 1:
            raise ValueError("radius network must map 5 statistics to 1 output")

    @property
    def semi_supervised(self) -> bool:
        """Unlabeled data only enters training when one of its losses is weighted."""
        return self.lam > 0 or self.mu > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_sizes"] = list(self.encoder_sizes)
        d["radius_sizes"] = list(self.radius_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})


@dataclass(frozen=True)
class LossBreakdown:
    L_s: float
    L_p: float
    L_u: float
    lam: float
    mu: float
    L_final: float

    @classmethod
    def combine(cls, L_s, L_p, L_u, lam, mu) -> "LossBreakdown":
        return cls(L_s, L_p, L_u, lam, mu, L_s + lam * L_p + mu * L_u)


# ---------------------------------------------------------------------------
# standalone losses


def _embed(encoder: MlpParams | None, X, masks=None):
    if encoder is None:
        return np.asarray(X, dtype=np.float64), None
    return mlp_forward(encoder, X, masks)


def supervised_loss(encoder: MlpParams, query_X, query_y, support_X, support_y):
    """Mean negative log-probability of the true query class.

    Centers are the support means, so the encoder gradient collects the
    query path and the center path. Returns (loss, encoder grads, prototypes).
    """
    Xs = np.asarray(support_X, dtype=np.float64)
    Xq = np.asarray(query_X, dtype=np.float64)
    ns = Xs.shape[0]
    V, tape = mlp_forward(encoder, np.vstack([Xs, Xq]))
    Vs, Vq = V[:ns], V[ns:]
    protos = compute_prototypes(Vs, support_y)
    rows_q = protos.index_of(query_y)
    loss, gVq, gC = kernels.proto_xent(Vq, protos.centers, rows_q)
    rows_s = protos.index_of(support_y)
    counts = np.asarray(protos.counts, dtype=np.float64)
    gVs = gC[rows_s] / counts[rows_s][:, None]
    grads, _ = mlp_backward(encoder, tape, np.vstack([gVs, gVq]))
    return loss, grads, protos


def pseudo_loss(encoder: MlpParams, in_radius_X, pseudo_labels, support_X, support_y):
    """Same form as the supervised loss over in-radius samples and their pseudo classes.

    Pseudo-labels are constants. An empty set gives zero loss and zero gradients.
    """
    X = np.asarray(in_radius_X, dtype=np.float64)
    if X.shape[0] == 0:
        return 0.0, encoder.zeros_like()
    labels = [p.label if hasattr(p, "label") else int(p) for p in pseudo_labels]
    loss, grads, _ = supervised_loss(encoder, X, labels, support_X, support_y)
    return loss, grads


def draw_perturbation(n: int, dim: int, hidden: Sequence[int], sigma: float, theta: float,
                      rng: np.random.Generator):
    """Input noise (n, dim) and one dropout mask per hidden layer."""
    noise = sigma * rng.standard_normal((n, dim)) if sigma > 0 else np.zeros((n, dim))
    masks = [dropout_mask((n, h), theta, rng) for h in hidden]
    return noise, masks


def consistency_loss(encoder: MlpParams, out_X, perturb_sigma: float = 0.05, dropout_theta: float = 0.2,
                     rng: np.random.Generator | None = None, perturbation=None, target=None):
    """Mean squared embedding gap between a perturbed pass and a clean pass.

    The perturbed pass adds Gaussian input noise and drops hidden units at
    rate ``dropout_theta``. The clean pass is a fixed target (no gradient).
    Pass ``perturbation=(noise, masks)`` to freeze the random draw.
    """
    X = np.asarray(out_X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        return 0.0, encoder.zeros_like()
    if perturbation is None:
        if perturb_sigma == 0 and dropout_theta == 0:
            perturbation = (np.zeros_like(X), None)
        else:
            rng = rng if rng is not None else np.random.default_rng()
            perturbation = draw_perturbation(n, X.shape[1], encoder.sizes[1:-1], perturb_sigma,
                                             dropout_theta, rng)
    noise, masks = perturbation
    if target is None:
        target, _ = mlp_forward(encoder, X)
    Vp, tape = mlp_forward(encoder, X + noise, masks)
    diff = Vp - target
    loss = float(np.einsum("nd,nd->", diff, diff)) / n
    grads, _ = mlp_backward(encoder, tape, 2.0 * diff / n)
    return loss, grads


# ---------------------------------------------------------------------------
# one training step


@dataclass
class EpisodeData:
    """Normalized matrices for one training run."""

    Xs: np.ndarray
    ys: np.ndarray
    Xq: np.ndarray
    yq: np.ndarray
    Xu: np.ndarray


@dataclass
class EpisodeResult:
    losses: LossBreakdown
    encoder_grads: MlpParams | None
    radius_grads: MlpParams | None
    prototypes: Prototypes
    corrected: Prototypes
    query_accuracy: float
    n_in_radius: int
    radii: np.ndarray | None = None


def episode_step(encoder: MlpParams | None, radius_net: MlpParams, data: EpisodeData,
                 cfg: TrainConfig, rng: np.random.Generator) -> EpisodeResult:
    semi = cfg.semi_supervised and data.Xu.shape[0] > 0
    lam, mu = cfg.lam, cfg.mu
    ns, nq = data.Xs.shape[0], data.Xq.shape[0]
    X_all = np.vstack([data.Xs, data.Xq, data.Xu]) if semi else np.vstack([data.Xs, data.Xq])
    with np.errstate(over="ignore", invalid="ignore"):
        V, tape = _embed(encoder, X_all)
    if not np.all(np.isfinite(V)):
        raise TrainingError("non-finite embeddings")
    Vs, Vq, Vu = V[:ns], V[ns:ns + nq], V[ns + nq:]
    protos = compute_prototypes(Vs, data.ys)

    rd = None
    corrected = protos
    if semi:
        if Vu.shape[0] < 2:
            raise TrainingError("unlabeled pool needs at least 2 samples")
        table = normalized_distances(Vu, protos)
        if cfg.use_radius:
            rd = predict_radii(radius_net, table)
            radii = rd.radii
        else:
            radii = np.full(len(protos.classes), np.inf)
        pseudo = assign_pseudo_labels(table, radii, Vu, protos)
        rows, gate = pseudo_arrays(pseudo, protos)
        corrected = update_prototypes(Vs, data.ys, Vu, pseudo, protos.classes)
    else:
        rows = np.zeros(0, dtype=np.int64)
        gate = np.zeros(0, dtype=bool)

    C = corrected.centers
    rows_q = corrected.index_of(data.yq)
    L_s, gVq, gC_s = kernels.proto_xent(Vq, C, rows_q)
    q_acc = float(np.mean(kernels.sq_dists(Vq, C).argmin(axis=1) == rows_q)) if nq else float("nan")

    L_p, L_u = 0.0, 0.0
    gC = gC_s.copy()
    gVu = np.zeros_like(Vu)
    if semi and gate.any():
        L_p, gVin, gC_p = kernels.proto_xent(Vu[gate], C, rows[gate])
        if lam > 0:
            gC += lam * gC_p
            gVu[gate] += lam * gVin

    out = ~gate if semi else gate
    enc_grads = None
    if semi and out.any():
        Xo = data.Xu[out]
        if encoder is not None:
            noise, masks = draw_perturbation(Xo.shape[0], Xo.shape[1], encoder.sizes[1:-1],
                                             cfg.perturb_sigma, cfg.dropout_theta, rng)
            L_u, gu = consistency_loss(encoder, Xo, perturbation=(noise, masks), target=Vu[out])
            if mu > 0:
                enc_grads = MlpParams.from_arrays([mu * a for a in gu.arrays()])
        else:
            noise = cfg.perturb_sigma * rng.standard_normal(Xo.shape)
            L_u = float(np.einsum("nd,nd->", noise, noise)) / Xo.shape[0]

    losses = LossBreakdown.combine(L_s, L_p, L_u, lam, mu)
    if not all(math.isfinite(v) for v in (L_s, L_p, L_u)):
        raise TrainingError("non-finite loss")

    if encoder is not None:
        counts = np.asarray(corrected.counts, dtype=np.float64)
        rows_s = corrected.index_of(data.ys)
        gVs = gC[rows_s] / counts[rows_s][:, None]
        parts = [gVs, gVq]
        if semi:
            gVu[gate] += gC[rows[gate]] / counts[rows[gate]][:, None]
            parts.append(gVu)
        g_main, _ = mlp_backward(encoder, tape, np.vstack(parts))
        if enc_grads is None:
            enc_grads = g_main
        else:
            enc_grads = MlpParams.from_arrays([a + b for a, b in zip(g_main.arrays(), enc_grads.arrays())])

    rad_grads = None
    if rd is not None:
        g_r = radius_surrogate_grad(gC_s, Vu, table, rows, corrected, rd.radii, cfg.tau)
        g_logit = g_r * sigmoid(rd.logits)
        rad_grads, _ = mlp_backward(radius_net, rd.tape, g_logit[:, None])

    return EpisodeResult(losses, enc_grads, rad_grads, protos, corrected, q_acc,
                         int(gate.sum()), None if rd is None else rd.radii)


# ---------------------------------------------------------------------------
# model


@dataclass
class TrainedModel:
    encoder: MlpParams | None
    radius_net: MlpParams
    prototypes: Prototypes
    norm_stats: NormStats
    config: TrainConfig
    history: list = field(default_factory=list)

    def embed(self, X_raw) -> np.ndarray:
        X, _ = normalize(np.atleast_2d(np.asarray(X_raw, dtype=np.float64)), self.norm_stats)
        V, _ = _embed(self.encoder, X)
        return V

    def predict_batch(self, X_raw):
        """(labels, probabilities) for an (N, 24) matrix of raw vectors."""
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
        if not np.all(np.isfinite(X_raw)):
            raise ValueError("non-finite input")
        P, labels = classify(self.embed(X_raw), self.prototypes)
        return labels, P


def predict(model: TrainedModel, x):
    """Condition label and class probabilities for one raw feature vector."""
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite input")
    labels, P = model.predict_batch(values.reshape(1, -1))
    return ConditionLabel(int(labels[0])), P[0]


def _episode_data(split: EpisodeSplit, stats: NormStats, with_unlabeled: bool) -> EpisodeData:
    Xs, _ = normalize(stack(split.support), stats)
    Xq, _ = normalize(stack(split.query), stats)
    if with_unlabeled and split.unlabeled:
        Xu, _ = normalize(stack(split.unlabeled), stats)
    else:
        Xu = np.zeros((0, Xs.shape[1]))
    return EpisodeData(Xs, labels_of(split.support), Xq, labels_of(split.query), Xu)


def _final_centers(encoder, radius_net, data: EpisodeData, cfg: TrainConfig) -> Prototypes:
    Vs, _ = _embed(encoder, data.Xs)
    protos = compute_prototypes(Vs, data.ys)
    if not (cfg.semi_supervised and data.Xu.shape[0] >= 2):
        return protos
    Vu, _ = _embed(encoder, data.Xu)
    table = normalized_distances(Vu, protos)
    radii = predict_radii(radius_net, table).radii if cfg.use_radius else np.full(len(protos.classes), np.inf)
    pseudo = assign_pseudo_labels(table, radii, Vu, protos)
    return update_prototypes(Vs, data.ys, Vu, pseudo, protos.classes)


def fit(split: EpisodeSplit, config: TrainConfig = TrainConfig(), callback=None) -> TrainedModel:
    """Train encoder and radius network on one episode split.

    Normalization statistics come from the labeled training vectors
    (support + query). ``callback(epoch, result)`` is invoked after every
    epoch, before the parameter update is applied.
    """
    cfg = config
    if not split.support or not split.query:
        raise TrainingError("support and query sets must be non-empty")
    labeled = np.vstack([stack(split.support), stack(split.query)])
    if labeled.shape[0] < 2:
        raise TrainingError("need at least 2 labeled vectors")
    _, stats = normalize(labeled)
    data = _episode_data(split, stats, cfg.semi_supervised)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    enc_rng, rad_rng, noise_rng = (np.random.default_rng(s) for s in seeds)
    encoder = None
    if cfg.use_encoder:
        if cfg.encoder_sizes[0] != data.Xs.shape[1]:
            raise ValueError("encoder input size must match the feature dimension")
        encoder = init_mlp(cfg.encoder_sizes, enc_rng)
    radius_net = init_mlp(cfg.radius_sizes, rad_rng)
    enc_state = AdamState.zeros(encoder.arrays()) if encoder is not None else None
    rad_state = AdamState.zeros(radius_net.arrays())

    history = []
    prev, still = None, 0
    for epoch in range(cfg.epochs):
        try:
            res = episode_step(encoder, radius_net, data, cfg, noise_rng)
        except TrainingError as e:
            raise TrainingError(str(e), epoch) from e
        if callback is not None:
            callback(epoch, res)
        lb = res.losses
        history.append({
            "epoch": epoch,
            "L_s": lb.L_s, "L_p": lb.L_p, "L_u": lb.L_u, "L_final": lb.L_final,
            "query_accuracy": res.query_accuracy,
            "in_radius": res.n_in_radius,
        })
        if encoder is not None:
            new, enc_state = adam_step(encoder.arrays(), res.encoder_grads.arrays(), enc_state, cfg.lr_encoder)
            encoder = MlpParams.from_arrays(new)
            if not all(np.all(np.isfinite(a)) for a in new):
                raise TrainingError("non-finite encoder parameters", epoch)
        if res.radius_grads is not None:
            new, rad_state = adam_step(radius_net.arrays(), res.radius_grads.arrays(), rad_state, cfg.lr_radius)
            radius_net = MlpParams.from_arrays(new)
        if prev is not None and abs(lb.L_final - prev) < cfg.tol:
            still += 1
            if still >= cfg.patience:
                break
        else:
            still = 0
        prev = lb.L_final

    centers = _final_centers(encoder, radius_net, data, cfg)
    return TrainedModel(encoder, radius_net, centers, stats, cfg, history)


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "norm_stats": model.norm_stats.to_dict(),
        "encoder": None if model.encoder is None else model.encoder.to_dict(),
        "radius_net": model.radius_net.to_dict(),
        "prototypes": model.prototypes.to_dict(),
        "history": model.history,
    }


def dumps_model(model: TrainedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1) + "\n"


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


_REQUIRED = ("schema", "config", "norm_stats", "encoder", "radius_net", "prototypes", "history")


def model_from_dict(d: dict) -> TrainedModel:
    if not isinstance(d, dict):
        raise CheckpointError("malformed checkpoint")
    if "schema" in d and d["schema"] != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {d['schema']!r} (expected {SCHEMA_VERSION})")
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise CheckpointError(f"malformed checkpoint: missing {', '.join(missing)}")
    try:
        return TrainedModel(
            encoder=None if d["encoder"] is None else MlpParams.from_dict(d["encoder"]),
            radius_net=MlpParams.from_dict(d["radius_net"]),
            prototypes=Prototypes.from_dict(d["prototypes"]),
            norm_stats=NormStats.from_dict(d["norm_stats"]),
            config=TrainConfig.from_dict(d["config"]),
            history=list(d["history"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e


def load_model(path) -> TrainedModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e
    return model_from_dict(d)
