"""Synthetic switchgear telemetry with per-class fault signatures.

Class 1 draws every channel around its nominal value and stays inside the
normal range (nominal +/- 3 spreads). Fault classes shift their signature
channels by a few spreads. Two shared latent factors (load and weather)
move several channels together, which makes raw Euclidean distances a poor
class metric and gives the learned mapping something to undo.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .features import (FEATURE_NAMES, N_FEATURES, ConditionLabel, FeatureVector, LabeledSample,
                       UnlabeledSample)

IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}

# nominal value and one-sigma spread of healthy equipment
DEFAULT_NORMAL: dict[str, tuple[float, float]] = {
    "r1": (42.0, 4.0), "r2": (42.0, 4.0), "r3": (42.0, 4.0),
    "q1": (1.10, 0.06),   # closing speed, m/s
    "q2": (1.50, 0.08),   # opening speed, m/s
    "q3": (11.0, 0.35),   # closing stroke, mm
    "q4": (11.0, 0.35),   # opening stroke, mm
    "q5": (30.0, 1.6),    # closing time, ms
    "q6": (55.0, 2.5),    # opening time, ms
    "p1": (1.0, 0.0), "p2": (1.0, 0.0),
    "t1": (20.0, 5.0),    # ambient, degC
    "t2": (55.0, 8.0),    # humidity, %
    "c1": (6.0, 1.6), "c2": (6.0, 1.6), "c3": (6.0, 1.6),  # ultrasonic, dB
    "l1": (8.0, 0.6),     # energy-storage motor run time, s
    "l2": (3.0, 0.22),    # energy-storage motor peak current, A
    "l3": (2.5, 0.18),    # drive motor run time, s
    "l4": (2.0, 0.15),    # drive motor peak current, A
    "l5": (2.0, 0.15),    # ground-cutter motor run time, s
    "l6": (0.80, 0.06),   # ground-cutter motor peak current, A
    "f": (1500.0, 120.0),  # insulation resistance, MOhm
    "m": (0.60, 0.10),    # load rate
}

# per class: channel -> shift in spreads of that channel
DEFAULT_SIGNATURES: dict[int, dict[str, float]] = {
    2: {"q1": -2.0, "q2": -2.5, "q5": 2.5, "q6": 2.0, "l1": 2.0, "l3": 2.0, "l2": 1.5, "l6": 2.5},
    3: {"f": -3.5, "t2": 2.0, "c1": 1.0, "c3": 1.0},
    4: {"q1": -2.5, "q3": -2.5, "q2": -1.0, "t1": -2.0},
    5: {"q1": -1.5, "q2": 1.5, "q3": 1.5, "q4": -2.5, "m": 2.0},
    6: {"r1": 3.0, "r2": 2.0, "r3": 2.0, "f": -1.0},
    7: {"c1": 2.5, "c2": 2.5, "c3": 2.5, "q5": 2.0, "q6": 2.0, "t1": 1.0, "m": 1.0},
}

# probability that a fault class trips a position flag to 0
DEFAULT_FLAG_RATES: dict[int, float] = {2: 0.15, 4: 0.25, 6: 1.0}

# channels loaded by the shared latent factors (coefficient in spreads);
# load heats the lines and raises motor currents and discharge, cold weather
# slows the mechanism and raises humidity
LOAD_LOADINGS = {"m": 2.5, "r1": 2.5, "r2": 2.5, "r3": 2.5, "l2": 1.5, "l4": 1.5,
                 "c1": 1.5, "c2": 1.5, "c3": 1.5, "f": -1.0}
WEATHER_LOADINGS = {"t1": -2.5, "q1": -1.5, "q2": -1.5, "q3": -1.0, "q5": 1.5, "q6": 1.5,
                    "t2": 1.5, "f": -1.0, "r1": -1.0, "r2": -1.0, "r3": -1.0}

# default labeled counts per class 1..7
DEFAULT_TRAIN_COUNTS = {1: 34, 2: 16, 3: 24, 4: 40, 5: 38, 6: 18, 7: 30}
DEFAULT_TEST_COUNTS = {1: 46, 2: 12, 3: 20, 4: 48, 5: 34, 6: 14, 7: 26}
DEFAULT_UNLABELED = 478


def _unlabeled_mix(total: int) -> dict[int, int]:
    mix = {k: DEFAULT_TRAIN_COUNTS[k] + DEFAULT_TEST_COUNTS[k] for k in DEFAULT_TRAIN_COUNTS}
    n = sum(mix.values())
    raw = {k: total * v / n for k, v in mix.items()}
    out = {k: int(v) for k, v in raw.items()}
    for k in sorted(raw, key=lambda k: (-(raw[k] - out[k]), k))[: total - sum(out.values())]:
        out[k] += 1
    return out


@dataclass
class ScenarioConfig:
    train_counts: dict = field(default_factory=lambda: dict(DEFAULT_TRAIN_COUNTS))
    test_counts: dict = field(default_factory=lambda: dict(DEFAULT_TEST_COUNTS))
    unlabeled_counts: dict = field(default_factory=lambda: _unlabeled_mix(DEFAULT_UNLABELED))
    noise_level: float = 1.0
    latent_level: float = 1.0
    shift_scale: float = 1.0
    normal: dict = field(default_factory=lambda: dict(DEFAULT_NORMAL))
    signatures: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_SIGNATURES.items()})
    flag_rates: dict = field(default_factory=lambda: dict(DEFAULT_FLAG_RATES))
    seed: int = 0

    def __post_init__(self):
        for name in ("train_counts", "test_counts", "unlabeled_counts", "signatures", "flag_rates"):
            setattr(self, name, {int(k): v for k, v in getattr(self, name).items()})
        self.normal = {k: (float(v[0]), float(v[1])) for k, v in self.normal.items()}
        if set(self.normal) != set(FEATURE_NAMES):
            raise ValueError("normal-range table must cover every feature")
        for counts in (self.train_counts, self.test_counts, self.unlabeled_counts):
            if any(int(v) < 0 for v in counts.values()):
                raise ValueError("class counts must be non-negative")
            if any(k not in range(1, 8) for k in counts):
                raise ValueError("class keys must be in 1..7")
        for k in range(2, 8):
            if not self.signatures.get(k) and self.flag_rates.get(k, 0.0) == 0.0:
                raise ValueError(f"fault class {k} perturbs no feature")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normal"] = {k: list(v) for k, v in self.normal.items()}
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        return cls(**dict(d))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def normal_range(self, name: str) -> tuple[float, float]:
        mean, spread = self.normal[name]
        return mean - 3.0 * spread, mean + 3.0 * spread

    def class_mean(self, k: int) -> np.ndarray:
        """Noise-free class-conditional center (latent factors at zero)."""
        mean = np.array([self.normal[n][0] for n in FEATURE_NAMES])
        spread = np.array([self.normal[n][1] for n in FEATURE_NAMES])
        for name, shift in self.signatures.get(int(k), {}).items():
            mean[IDX[name]] += self.shift_scale * shift * spread[IDX[name]]
        return mean


def _truncnorm(rng: np.random.Generator, size, bound: float = 3.0) -> np.ndarray:
    z = rng.standard_normal(size)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z


def _physical_clip(v: np.ndarray) -> np.ndarray:
    v[IDX["t2"]] = min(max(v[IDX["t2"]], 0.0), 100.0)
    v[IDX["m"]] = min(max(v[IDX["m"]], 0.0), 2.0)
    v[IDX["f"]] = max(v[IDX["f"]], 1.0)
    for i in range(N_FEATURES):
        name = FEATURE_NAMES[i]
        if name[0] in "qlc" or name == "f":
            v[i] = max(v[i], 1e-3)
    return v


def generate_vector(label: int, config: ScenarioConfig, rng: np.random.Generator) -> FeatureVector:
    k = int(ConditionLabel(label))
    spread = np.array([config.normal[n][1] for n in FEATURE_NAMES])
    v = config.class_mean(k)
    z = _truncnorm(rng, N_FEATURES)
    latent = _truncnorm(rng, 2)
    noise = z.copy()
    for name, w in LOAD_LOADINGS.items():
        noise[IDX[name]] += config.latent_level * w * latent[0]
    for name, w in WEATHER_LOADINGS.items():
        noise[IDX[name]] += config.latent_level * w * latent[1]
    noise *= config.noise_level
    v = v + noise * spread
    v[IDX["p1"]] = v[IDX["p2"]] = 1.0
    if k == 1:
        lo = np.array([config.normal_range(n)[0] for n in FEATURE_NAMES])
        hi = np.array([config.normal_range(n)[1] for n in FEATURE_NAMES])
        v = np.clip(v, lo, hi)
    rate = config.flag_rates.get(k, 0.0)
    if rate > 0 and rng.random() < rate:
        which = rng.integers(0, 3)  # breaker, knife, or both
        if which in (0, 2):
            v[IDX["p1"]] = 0.0
        if which in (1, 2):
            v[IDX["p2"]] = 0.0
    if k == 6:
        # one phase overheats well past the normal band
        hot = IDX[f"r{int(rng.integers(1, 4))}"]
        upper = config.normal_range("r1")[1]
        v[hot] = max(v[hot], upper + (0.5 + abs(rng.normal(1.5, 1.0))) * config.normal["r1"][1])
    return FeatureVector(_physical_clip(v))


def generate_record(label: int, config: ScenarioConfig, rng: np.random.Generator, id: str = "") -> LabeledSample:
    return LabeledSample(generate_vector(label, config, rng), ConditionLabel(int(label)), id)


@dataclass(frozen=True)
class SimulatedDataset:
    """Labeled train/test records and an unlabeled pool.

    ``hidden_labels`` holds ground truth for the unlabeled pool; it exists for
    evaluation only and is never part of an EpisodeSplit.
    """

    train: tuple
    test: tuple
    unlabeled: tuple
    hidden_labels: tuple

    @property
    def labeled(self) -> tuple:
        return self.train + self.test


def _draw(counts: Mapping[int, int], config, rng, prefix: str, label_cls=True):
    order = [k for k in sorted(counts) for _ in range(int(counts[k]))]
    perm = rng.permutation(len(order)) if order else np.zeros(0, dtype=int)
    out, labels = [], []
    for j, i in enumerate(perm):
        k = order[i]
        rid = f"{prefix}{j:04d}"
        x = generate_vector(k, config, rng)
        out.append(LabeledSample(x, ConditionLabel(k), rid) if label_cls else UnlabeledSample(x, rid))
        labels.append(ConditionLabel(k))
    return tuple(out), tuple(labels)


def generate_dataset(config: ScenarioConfig) -> SimulatedDataset:
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    r_train, r_test, r_unl = (np.random.default_rng(s) for s in seeds)
    train, _ = _draw(config.train_counts, config, r_train, "tr")
    test, _ = _draw(config.test_counts, config, r_test, "te")
    unlabeled, hidden = _draw(config.unlabeled_counts, config, r_unl, "un", label_cls=False)
    return SimulatedDataset(train, test, unlabeled, hidden)


def generate_series(n: int, rng: np.random.Generator, spikes: int = 3, noise: float = 0.02,
                    spike_height: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Angular-displacement-like stroke trace with isolated interference spikes.

    Returns (corrupted series, clean series).
    """
    t = np.linspace(0.0, 1.0, n)
    clean = 11.0 / (1.0 + np.exp(-(t - 0.4) * 18.0))
    series = clean + noise * rng.standard_normal(n)
    where = rng.choice(np.arange(2, n - 2), size=min(spikes, max(n - 4, 0)), replace=False)
    series[where] += spike_height * rng.choice([-1.0, 1.0], size=where.size)
    return series, clean
