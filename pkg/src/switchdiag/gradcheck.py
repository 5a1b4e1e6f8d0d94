"""Finite-difference audit of every hand-written gradient.

Each check draws ``points`` random instances (parameters and inputs) and
compares analytic gradients against central differences on a random subset
of coordinates. Coordinates that straddle a ReLU kink are skipped.
"""
from __future__ import annotations

import numpy as np

from .baselines import _cnn_masks, cnn_loss
from .nnet import MlpParams, gradient_check, init_cnn, init_mlp, mlp_backward, mlp_forward, softplus, sigmoid
from .training import consistency_loss, draw_perturbation, pseudo_loss, supervised_loss

CHECKS = ("encoder", "radius_net", "cnn", "supervised_loss", "pseudo_loss", "consistency_loss")
ENCODER_SIZES = (24, 48, 12, 8)
RADIUS_SIZES = (5, 16, 1)


def _episode(rng, n_classes=4, per_class=3, n_query=8):
    ys = np.repeat(np.arange(1, n_classes + 1), per_class)
    yq = rng.integers(1, n_classes + 1, n_query)
    return rng.random((ys.size, 24)), ys, rng.random((n_query, 24)), yq


def _encoder_point(rng, eps, max_coords):
    enc = init_mlp(ENCODER_SIZES, rng)
    X = rng.random((5, 24))
    w = rng.standard_normal((5, 8))
    V, tape = mlp_forward(enc, X)
    grads, gx = mlp_backward(enc, tape, w)

    def loss(arrays):
        out, t = mlp_forward(MlpParams.from_arrays(arrays[:-1]), arrays[-1])
        return float(np.sum(w * out)), t.relu_pattern()

    return gradient_check(loss, enc.arrays() + [X], grads.arrays() + [gx], eps=eps,
                          max_coords=max_coords, rng=rng)


def _radius_point(rng, eps, max_coords):
    net = init_mlp(RADIUS_SIZES, rng)
    S = np.column_stack([rng.random(7) * 3, rng.random(7), rng.random(7) * 0.5,
                         rng.standard_normal(7), 1 + rng.random(7) * 4])
    w = rng.standard_normal(7)
    logits, tape = mlp_forward(net, S)
    grads, gx = mlp_backward(net, tape, (w * sigmoid(logits[:, 0]))[:, None])

    def loss(arrays):
        z, t = mlp_forward(MlpParams.from_arrays(arrays[:-1]), arrays[-1])
        return float(np.sum(w * softplus(z[:, 0]))), t.relu_pattern()

    return gradient_check(loss, net.arrays() + [S], grads.arrays() + [gx], eps=eps,
                          max_coords=max_coords, rng=rng)


def _cnn_point(rng, eps, max_coords):
    params = init_cnn(rng)
    X = rng.random((4, 24))
    rows = rng.integers(0, 7, 4)
    masks = _cnn_masks(params, 4, 0.2, rng)
    _, grads, _ = cnn_loss(params, X, rows, masks)

    def loss(arrays):
        value, _, tape = cnn_loss(params.with_arrays(arrays), X, rows, masks)
        return value, tape.relu_pattern()

    return gradient_check(loss, params.arrays(), grads, eps=eps, max_coords=max_coords, rng=rng)


def _pattern(arrays, X):
    _, t = mlp_forward(MlpParams.from_arrays(arrays), X)
    return t.relu_pattern()


def _supervised_point(rng, eps, max_coords):
    enc = init_mlp(ENCODER_SIZES, rng)
    Xs, ys, Xq, yq = _episode(rng)
    _, grads, _ = supervised_loss(enc, Xq, yq, Xs, ys)
    X_all = np.vstack([Xs, Xq])

    def loss(arrays):
        value, _, _ = supervised_loss(MlpParams.from_arrays(arrays), Xq, yq, Xs, ys)
        return value, _pattern(arrays, X_all)

    return gradient_check(loss, enc.arrays(), grads.arrays(), eps=eps, max_coords=max_coords, rng=rng)


def _pseudo_point(rng, eps, max_coords):
    enc = init_mlp(ENCODER_SIZES, rng)
    Xs, ys, Xu, yu = _episode(rng, n_query=6)
    _, grads = pseudo_loss(enc, Xu, yu, Xs, ys)
    X_all = np.vstack([Xs, Xu])

    def loss(arrays):
        value, _ = pseudo_loss(MlpParams.from_arrays(arrays), Xu, yu, Xs, ys)
        return value, _pattern(arrays, X_all)

    return gradient_check(loss, enc.arrays(), grads.arrays(), eps=eps, max_coords=max_coords, rng=rng)


def _consistency_point(rng, eps, max_coords):
    enc = init_mlp(ENCODER_SIZES, rng)
    X = rng.random((6, 24))
    noise, masks = draw_perturbation(6, 24, ENCODER_SIZES[1:-1], 0.05, 0.2, rng)
    target, _ = mlp_forward(enc, X)  # stop-gradient target, frozen with the noise
    _, grads = consistency_loss(enc, X, perturbation=(noise, masks), target=target)

    def loss(arrays):
        e = MlpParams.from_arrays(arrays)
        value, _ = consistency_loss(e, X, perturbation=(noise, masks), target=target)
        _, t = mlp_forward(e, X + noise, masks)
        return value, t.relu_pattern()

    return gradient_check(loss, enc.arrays(), grads.arrays(), eps=eps, max_coords=max_coords, rng=rng)


_POINTS = {
    "encoder": _encoder_point,
    "radius_net": _radius_point,
    "cnn": _cnn_point,
    "supervised_loss": _supervised_point,
    "pseudo_loss": _pseudo_point,
    "consistency_loss": _consistency_point,
}


def run_check(name: str, points: int = 20, seed: int = 0, eps: float = 1e-5, max_coords: int = 40) -> dict:
    """Worst relative error of one check over ``points`` random instances."""
    if name not in _POINTS:
        raise KeyError(f"unknown gradient check {name!r}")
    worst, checked, skipped = 0.0, 0, 0
    for p in range(points):
        rng = np.random.default_rng([seed, CHECKS.index(name), p])
        r = _POINTS[name](rng, eps, max_coords)
        worst = max(worst, r["max_rel_error"])
        checked += r["checked"]
        skipped += r["skipped"]
    return {"max_rel_error": worst, "checked": checked, "skipped": skipped, "points": points}


def run_gradcheck(points: int = 20, seed: int = 0, eps: float = 1e-5, max_coords: int = 40) -> dict:
    return {name: run_check(name, points, seed, eps, max_coords) for name in CHECKS}
