"""Small numpy neural-network kernels with hand-written backward passes.

Everything is float64. Networks are plain parameter containers; forward
returns a tape that backward consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# dense networks


@dataclass
class MlpParams:
    """Dense layers as (out x in weight, bias) pairs; ReLU between, identity at the end."""

    weights: list
    biases: list

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights/biases length mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != b.size:
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @property
    def sizes(self) -> tuple:
        if not self.weights:
            return ()
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls(
            [np.array(w, dtype=np.float64).reshape(len(w), -1) for w in d["weights"]],
            [np.array(b, dtype=np.float64) for b in d["biases"]],
        )


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class GradientTape:
    """Cached activations of one forward pass.

    ``inputs[i]`` is what layer i consumed (after ReLU and dropout of the
    previous layer); ``pre[i]`` is layer i's affine output.
    """

    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    squeeze: bool = False
    sizes: tuple = ()

    def relu_pattern(self) -> np.ndarray:
        """Concatenated hidden-unit activity flags, for kink detection."""
        if len(self.pre) <= 1:
            return np.zeros(0, dtype=bool)
        return np.concatenate([(p > 0).ravel() for p in self.pre[:-1]])


def mlp_forward(params: MlpParams, x, dropout_masks: Sequence | None = None):
    """Forward pass for one vector or a batch of row vectors.

    ``dropout_masks`` (one per hidden layer, already scaled) multiply the
    hidden activations after ReLU.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x.reshape(1, -1) if squeeze else x
    if X.ndim != 2:
        raise ShapeError("input must be a vector or a 2-D batch")
    if params.n_layers == 0:
        raise ShapeError("network has no layers")
    if X.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(f"input dimension {X.shape[1]} != network input {params.weights[0].shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    n_hidden = params.n_layers - 1
    if dropout_masks is not None and len(dropout_masks) != n_hidden:
        raise ShapeError(f"expected {n_hidden} dropout masks, got {len(dropout_masks)}")
    tape = GradientTape(squeeze=squeeze, sizes=params.sizes)
    h = X
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w.T + b
        tape.pre.append(z)
        if i < n_hidden:
            h = relu(z)
            if dropout_masks is not None:
                m = np.asarray(dropout_masks[i], dtype=np.float64)
                tape.masks.append(m)
                h = h * m
        else:
            h = z
    return (h[0] if squeeze else h), tape


def mlp_backward(params: MlpParams, tape: GradientTape, grad_v):
    """Backpropagate ``grad_v`` (dL/dv) through a recorded pass.

    Returns (parameter gradients as MlpParams, dL/dx). Batch gradients are
    summed over rows.
    """
    if tape.sizes != params.sizes or len(tape.pre) != params.n_layers:
        raise ShapeError("tape does not belong to these parameters")
    g = np.asarray(grad_v, dtype=np.float64)
    g = g.reshape(1, -1) if tape.squeeze else g
    if g.shape != tape.pre[-1].shape:
        raise ShapeError(f"grad_v shape {g.shape} != output shape {tape.pre[-1].shape}")
    n = params.n_layers
    gw = [None] * n
    gb = [None] * n
    for i in range(n - 1, -1, -1):
        gw[i] = g.T @ tape.inputs[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
        if i > 0:
            if tape.masks:
                g = g * tape.masks[i - 1]
            g = g * (tape.pre[i - 1] > 0)
    grad_x = g[0] if tape.squeeze else g
    return MlpParams(gw, gb), grad_x


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)

    def to_dict(self) -> dict:
        return {"m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v], "t": self.t}


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Pure: inputs are not modified."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} vs {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------------------
# 1-D convolution


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out_channels, in_channels, kernel)
    bias: np.ndarray    # (out_channels,)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 3 or self.weight.shape[0] != self.bias.size:
            raise ShapeError("conv weight must be (out, in, kernel) with matching bias")

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass
class Conv1dParams:
    """Valid (unpadded) convolutions with ReLU, flattened into a dense head.

    A head with no layers passes the flattened conv output through unchanged.
    """

    convs: list
    head: MlpParams
    input_length: int = 24

    def arrays(self) -> list:
        out = []
        for c in self.convs:
            out += [c.weight, c.bias]
        return out + self.head.arrays()

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "Conv1dParams":
        n = 2 * len(self.convs)
        convs = [ConvLayer(arrays[i], arrays[i + 1]) for i in range(0, n, 2)]
        head = MlpParams.from_arrays(arrays[n:]) if len(arrays) > n else MlpParams([], [])
        return Conv1dParams(convs, head, self.input_length)

    def flat_size(self) -> int:
        length = self.input_length
        for c in self.convs:
            length = length - c.kernel + 1
        return length * self.convs[-1].weight.shape[0]

    def to_dict(self) -> dict:
        return {
            "input_length": self.input_length,
            "convs": [{"weight": c.weight.tolist(), "bias": c.bias.tolist()} for c in self.convs],
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Conv1dParams":
        return cls(
            [ConvLayer(np.array(c["weight"]), np.array(c["bias"])) for c in d["convs"]],
            MlpParams.from_dict(d["head"]),
            d["input_length"],
        )


def init_cnn(rng: np.random.Generator, input_length: int = 24, channels=(48, 12),
             kernels=(10, 6), n_classes: int = 7) -> Conv1dParams:
    convs = []
    c_in, length = 1, input_length
    for c_out, k in zip(channels, kernels):
        fan_in = c_in * k
        limit = np.sqrt(6.0 / fan_in)
        convs.append(ConvLayer(rng.uniform(-limit, limit, (c_out, c_in, k)), np.zeros(c_out)))
        c_in, length = c_out, length - k + 1
    head = init_mlp([c_in * length, n_classes], rng)
    return Conv1dParams(convs, head, input_length)


def _conv_valid(x, w, b):
    k = w.shape[2]
    if k > x.shape[2]:
        raise ShapeError(f"kernel length {k} exceeds series length {x.shape[2]}")
    win = sliding_window_view(x, k, axis=2)  # (N, Cin, Lout, K)
    return np.einsum("nclk,ock->nol", win, w) + b[None, :, None], win


@dataclass
class ConvTape:
    conv_inputs: list = field(default_factory=list)
    conv_windows: list = field(default_factory=list)
    conv_pre: list = field(default_factory=list)
    conv_masks: list = field(default_factory=list)
    head_tape: GradientTape | None = None
    squeeze: bool = False

    def relu_pattern(self) -> np.ndarray:
        parts = [(p > 0).ravel() for p in self.conv_pre]
        if self.head_tape is not None:
            parts.append(self.head_tape.relu_pattern())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def conv1d_forward(params: Conv1dParams, x, dropout_masks: Sequence | None = None):
    """Class scores for one 24-vector or a batch (N, 24).

    ``dropout_masks`` holds one mask per conv layer output (N, C, L) followed
    by one per hidden layer of the head.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x.reshape(1, -1) if squeeze else x
    if X.shape[1] != params.input_length:
        raise ShapeError(f"input length {X.shape[1]} != {params.input_length}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    tape = ConvTape(squeeze=squeeze)
    h = X[:, None, :]
    n_conv = len(params.convs)
    for i, layer in enumerate(params.convs):
        tape.conv_inputs.append(h)
        z, win = _conv_valid(h, layer.weight, layer.bias)
        tape.conv_windows.append(win)
        tape.conv_pre.append(z)
        h = relu(z)
        if dropout_masks is not None:
            m = dropout_masks[i]
            tape.conv_masks.append(m)
            h = h * m
    flat = h.reshape(h.shape[0], -1)
    if params.head.n_layers:
        head_masks = None if dropout_masks is None else list(dropout_masks[n_conv:])
        out, tape.head_tape = mlp_forward(params.head, flat, head_masks)
    else:
        out = flat
    return (out[0] if squeeze else out), tape


def conv1d_backward(params: Conv1dParams, tape: ConvTape, grad_scores):
    """Returns (gradient arrays in ``params.arrays()`` order, dL/dx)."""
    g = np.asarray(grad_scores, dtype=np.float64)
    g = g.reshape(1, -1) if tape.squeeze else g
    if params.head.n_layers:
        head_grads, g = mlp_backward(params.head, tape.head_tape, g)
        head_arrays = head_grads.arrays()
    else:
        head_arrays = []
    last = tape.conv_pre[-1]
    g = g.reshape(last.shape)
    conv_arrays = []
    for i in range(len(params.convs) - 1, -1, -1):
        layer = params.convs[i]
        if tape.conv_masks:
            g = g * tape.conv_masks[i]
        g = g * (tape.conv_pre[i] > 0)
        gw = np.einsum("nol,nclk->ock", g, tape.conv_windows[i])
        gb = g.sum(axis=(0, 2))
        x_in = tape.conv_inputs[i]
        gx = np.zeros_like(x_in)
        lout = g.shape[2]
        for k in range(layer.kernel):
            gx[:, :, k:k + lout] += np.einsum("nol,oc->ncl", g, layer.weight[:, :, k])
        conv_arrays = [gw, gb] + conv_arrays
        g = gx
    grad_x = g[:, 0, :]
    return conv_arrays + head_arrays, (grad_x[0] if tape.squeeze else grad_x)


# ---------------------------------------------------------------------------
# finite-difference checking


def gradient_check(
    loss_fn: Callable[[list], tuple],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients against central differences.

    ``loss_fn(arrays)`` returns ``(loss, pattern)`` where ``pattern`` is any
    array identifying the piecewise-linear region (ReLU activity). A
    coordinate whose +eps and -eps evaluations land in different regions
    straddles a kink and is skipped. The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    coords = [(i, j) for i, a in enumerate(arrays) for j in range(a.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[p] for p in sorted(pick)]
    worst, checked, skipped = 0.0, 0, 0
    for i, j in coords:
        flat = arrays[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        lp, pat_p = loss_fn(arrays)
        flat[j] = orig - eps
        lm, pat_m = loss_fn(arrays)
        flat[j] = orig
        if not np.array_equal(np.asarray(pat_p), np.asarray(pat_m)):
            skipped += 1
            continue
        num = (lp - lm) / (2.0 * eps)
        ana = float(np.asarray(analytic[i]).reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
        checked += 1
    return {"max_rel_error": worst, "checked": checked, "skipped": skipped}
