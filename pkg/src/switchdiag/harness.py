"""Experiment orchestration over simulated datasets.

Every experiment is a pure function of its ``ExperimentConfig``. For each
seed the harness simulates a dataset, splits the labeled training records
50/50 into support and query, keeps the simulated test records for scoring,
and trains every arm on that same partition.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baselines import CnnConfig, cnn_fit, cnn_predict, knn_fit, knn_predict, svm_fit, svm_predict
from .features import EpisodeSplit, labels_of, split_dataset, stack
from .proto import assign_pseudo_labels, normalized_distances, predict_radii
from .simulator import ScenarioConfig, generate_dataset
from .training import TrainConfig, TrainedModel, TrainingError, fit

REPORT_SCHEMA = 1
DEFAULT_SEEDS = tuple(range(10))
CLASSES = tuple(range(1, 8))
ABLATIONS = ("complete", "no_mapping", "no_radius", "no_pseudo_loss", "no_consistency")
SWEEP_MODELS = ("rln", "knn", "svm", "cnn")
SWEEP_HEADER = ("model", "size", "seed", "accuracy", "mean", "std")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = DEFAULT_SEEDS
    support_fraction: float = 0.5
    knn_k: int = 10
    svm_reg: float = 1e-2
    svm_epochs: int = 500
    cnn: CnnConfig = field(default_factory=CnnConfig)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not 0.0 < self.support_fraction < 1.0:
            raise ValueError("support_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "support_fraction": self.support_fraction,
            "knn_k": self.knn_k,
            "svm_reg": self.svm_reg,
            "svm_epochs": self.svm_epochs,
            "cnn": {k: getattr(self.cnn, k) for k in ("epochs", "lr", "dropout", "batch_size", "seed")},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {"scenario", "train", "seeds", "support_fraction", "knn_k", "svm_reg", "svm_epochs", "cnn"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        if "scenario" in d:
            d["scenario"] = ScenarioConfig.from_dict(d["scenario"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "cnn" in d:
            d["cnn"] = CnnConfig(**d["cnn"])
        return cls(**d)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class SeedResult:
    seed: int
    accuracy: float
    per_class: dict          # class -> accuracy, None when the class has no test samples
    confusion: tuple         # 7x7 counts, rows = true class, columns = predicted
    fingerprint: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "accuracy": self.accuracy,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": [list(r) for r in self.confusion],
            "fingerprint": self.fingerprint,
            "extras": dict(self.extras),
        }


def score(y_true, y_pred, seed: int = 0, fingerprint: str = "", extras: dict | None = None) -> SeedResult:
    """Overall accuracy, per-class accuracy and confusion counts over classes 1..7."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape or t.size == 0:
        raise ExperimentError("need matching, non-empty label arrays")
    cm = np.zeros((7, 7), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    per_class = {}
    for k in CLASSES:
        n = int(cm[k - 1].sum())
        per_class[k] = None if n == 0 else int(cm[k - 1, k - 1]) / n
    acc = int(np.trace(cm)) / int(cm.sum())
    return SeedResult(int(seed), acc, per_class, tuple(tuple(int(v) for v in r) for r in cm),
                      fingerprint, dict(extras or {}))


def _spread(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class ExperimentReport:
    """Per-seed scores and their aggregate for one arm, variant or model."""

    name: str
    config: dict
    results: list
    wall_clock: float = 0.0

    @property
    def accuracies(self) -> list:
        return [r.accuracy for r in self.results]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return _spread(self.accuracies)

    @property
    def confusion(self) -> np.ndarray:
        return np.sum([np.array(r.confusion) for r in self.results], axis=0)

    def per_class_mean(self) -> dict:
        out = {}
        for k in CLASSES:
            vals = [r.per_class[k] for r in self.results if r.per_class[k] is not None]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self, timing: bool = False) -> dict:
        """JSON-ready view. Wall-clock time is left out unless asked for, so
        reports of identical runs compare byte for byte."""
        d = {
            "schema": REPORT_SCHEMA,
            "name": self.name,
            "config": self.config,
            "seeds": [r.seed for r in self.results],
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "per_class_mean": {str(k): v for k, v in self.per_class_mean().items()},
            "confusion": self.confusion.tolist(),
            "per_seed": [r.to_dict() for r in self.results],
        }
        if timing:
            d["wall_clock_s"] = self.wall_clock
        return d


def dumps_reports(reports: Sequence[ExperimentReport], timing: bool = False) -> str:
    doc = {"schema": REPORT_SCHEMA, "reports": [r.to_dict(timing) for r in reports]}
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def reports_csv(reports: Sequence[ExperimentReport]) -> str:
    """One row per report: name, per-class mean accuracies, mean and spread."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name"] + [f"class{k}" for k in CLASSES] + ["mean", "std"])
    for r in reports:
        pc = r.per_class_mean()
        w.writerow([r.name] + ["" if pc[k] is None else repr(pc[k]) for k in CLASSES]
                   + [repr(r.mean), repr(r.std)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class SeedData:
    split: EpisodeSplit
    hidden_labels: tuple

    @property
    def fingerprint(self) -> str:
        return self.split.fingerprint()


def build_split(cfg: ExperimentConfig, seed: int) -> SeedData:
    """Simulate the scenario under ``seed`` and partition it."""
    ds = generate_dataset(replace(cfg.scenario, seed=int(seed)))
    f = cfg.support_fraction
    part = split_dataset(list(ds.train), list(ds.unlabeled), {"support": f, "query": 1.0 - f}, seed)
    split = EpisodeSplit(part.support, part.query, part.unlabeled, ds.test)
    return SeedData(split, tuple(int(h) for h in ds.hidden_labels))


def _fit(split: EpisodeSplit, train_cfg: TrainConfig, arm: str, seed: int) -> TrainedModel:
    try:
        return fit(split, train_cfg)
    except TrainingError as e:
        raise ExperimentError(f"arm {arm!r}, seed {seed}: {e}") from e


def _test_arrays(split: EpisodeSplit):
    return stack(split.test), labels_of(split.test)


def pseudo_label_quality(model: TrainedModel, split: EpisodeSplit, hidden: Sequence[int]) -> dict:
    """Accuracy of the final model's radius-gated pseudo-labels against hidden truth."""
    if not split.unlabeled or not model.config.semi_supervised:
        return {}
    V = model.embed(stack(split.unlabeled))
    table = normalized_distances(V, model.prototypes)
    radii = (predict_radii(model.radius_net, table).radii if model.config.use_radius
             else np.full(len(model.prototypes.classes), np.inf))
    pseudo = assign_pseudo_labels(table, radii, V, model.prototypes)
    truth = np.asarray(hidden)
    labels = np.array([p.label for p in pseudo])
    inside = np.array([p.in_radius for p in pseudo])
    return {
        "pseudo_accuracy": float(np.mean(labels == truth)),
        "pseudo_accuracy_in_radius": float(np.mean(labels[inside] == truth[inside])) if inside.any() else None,
        "in_radius": int(inside.sum()),
    }


def strong_config(train: TrainConfig) -> TrainConfig:
    return train.replace(lam=0.0, mu=0.0)


def variant_config(train: TrainConfig, variant: str) -> TrainConfig:
    if variant == "complete":
        return train
    if variant == "no_mapping":
        return train.replace(use_encoder=False)
    if variant == "no_radius":
        return train.replace(use_radius=False)
    if variant == "no_pseudo_loss":
        return train.replace(lam=0.0)
    if variant == "no_consistency":
        return train.replace(mu=0.0)
    raise ExperimentError(f"unknown ablation variant {variant!r}")


def _run_arms(cfg: ExperimentConfig, arms: Sequence[str],
              train_for: Callable[[str, int], TrainConfig],
              data_for: Callable[[str, SeedData], EpisodeSplit]) -> list:
    results = {a: [] for a in arms}
    clocks = {a: 0.0 for a in arms}
    for seed in cfg.seeds:
        sd = build_split(cfg, seed)
        X_test, y_test = _test_arrays(sd.split)
        for arm in arms:
            split = data_for(arm, sd)
            # arms may drop the unlabeled pool but never change the labeled partitions
            if split.with_unlabeled(sd.split.unlabeled).fingerprint() != sd.fingerprint:
                raise ExperimentError(f"arm {arm!r} seed {seed}: partition mismatch")
            t0 = time.perf_counter()
            model = _fit(split, train_for(arm, seed), arm, seed)
            clocks[arm] += time.perf_counter() - t0
            pred, _ = model.predict_batch(X_test)
            extras = pseudo_label_quality(model, split, sd.hidden_labels) if split.unlabeled else {}
            results[arm].append(score(y_test, pred, seed, sd.fingerprint, extras))
    echo = cfg.to_dict()
    return [ExperimentReport(a, {**echo, "train": train_for(a, cfg.train.seed).to_dict()},
                             results[a], clocks[a]) for a in arms]


def run_main_experiment(cfg: ExperimentConfig = ExperimentConfig()):
    """(strong, weak) reports.

    The strong arm sets both unlabeled-loss weights to zero and trains
    without the unlabeled pool; the weak arm runs the full method.
    """
    def train_for(arm, seed):
        base = cfg.train.replace(seed=seed)
        return strong_config(base) if arm == "strong" else base

    def data_for(arm, sd):
        return sd.split.with_unlabeled([]) if arm == "strong" else sd.split

    strong, weak = _run_arms(cfg, ("strong", "weak"), train_for, data_for)
    return strong, weak


def run_ablations(cfg: ExperimentConfig = ExperimentConfig()) -> list:
    """[(variant, report)] for the complete model and its four ablations."""
    reports = _run_arms(cfg, ABLATIONS,
                        lambda arm, seed: variant_config(cfg.train.replace(seed=seed), arm),
                        lambda arm, sd: sd.split)
    return [(r.name, r) for r in reports]


# ---------------------------------------------------------------------------
# baselines and label-efficiency sweep


def _baseline_predictions(model: TrainedModel, split: EpisodeSplit, cfg: ExperimentConfig, seed: int,
                          models: Sequence[str]) -> dict:
    labeled = list(split.support) + list(split.query)
    X_train, y_train = stack(labeled), labels_of(labeled)
    X_test, _ = _test_arrays(split)
    out = {}
    if "rln" in models:
        out["rln"], _ = model.predict_batch(X_test)
    if "knn" in models or "svm" in models:
        V_train, V_test = model.embed(X_train), model.embed(X_test)
        if "knn" in models:
            out["knn"] = knn_predict(knn_fit(V_train, y_train, cfg.knn_k), V_test)
        if "svm" in models:
            out["svm"] = svm_predict(svm_fit(V_train, y_train, cfg.svm_reg, cfg.svm_epochs), V_test)
    if "cnn" in models:
        out["cnn"] = cnn_predict(cnn_fit(X_train, y_train, replace(cfg.cnn, seed=seed)), X_test)
    return out


def run_baseline_comparison(cfg: ExperimentConfig = ExperimentConfig()) -> list:
    """Reports for RLN, SVM, KNN and CNN on identical partitions.

    KNN and SVM are fit on the trained RLN encoder's embeddings of the labeled
    training vectors; the CNN sees the raw vectors.
    """
    names = ("rln", "svm", "knn", "cnn")
    results = {m: [] for m in names}
    for seed in cfg.seeds:
        sd = build_split(cfg, seed)
        _, y_test = _test_arrays(sd.split)
        model = _fit(sd.split, cfg.train.replace(seed=seed), "rln", seed)
        preds = _baseline_predictions(model, sd.split, cfg, seed, names)
        for m in names:
            results[m].append(score(y_test, preds[m], seed, sd.fingerprint))
    echo = cfg.to_dict()
    return [ExperimentReport(m, echo, results[m]) for m in names]


def _take_stratified(samples, n: int) -> list:
    """First ``n`` samples, allocated over classes by largest remainder, at least one per class."""
    by_class: dict = {}
    for s in samples:
        by_class.setdefault(int(s.y), []).append(s)
    classes = sorted(by_class)
    total = len(samples)
    if n < len(classes):
        raise ExperimentError(f"size {n} leaves a class without samples")
    raw = {k: n * len(by_class[k]) / total for k in classes}
    alloc = {k: max(1, int(np.floor(raw[k]))) for k in classes}
    rest = n - sum(alloc.values())
    order = sorted(classes, key=lambda k: (-(raw[k] - np.floor(raw[k])), k))
    i = 0
    while rest > 0:
        k = order[i % len(order)]
        if alloc[k] < len(by_class[k]):
            alloc[k] += 1
            rest -= 1
        i += 1
    while rest < 0:
        k = max(classes, key=lambda k: (alloc[k] - raw[k], -k))
        alloc[k] -= 1
        rest += 1
    keep = {id(s) for k in classes for s in by_class[k][:alloc[k]]}
    return [s for s in samples if id(s) in keep]


def subsample_split(split: EpisodeSplit, size: int) -> EpisodeSplit:
    """Class-stratified reduction of support+query to ``size`` labeled samples.

    Support and query shrink in proportion; the full size returns the split unchanged.
    """
    total = len(split.support) + len(split.query)
    if size == total:
        return split
    if not 1 <= size < total:
        raise ExperimentError(f"size must be in [1, {total}], got {size}")
    n_support = int(round(size * len(split.support) / total))
    support = _take_stratified(split.support, n_support)
    query = _take_stratified(split.query, size - n_support)
    return EpisodeSplit(support, query, split.unlabeled, split.test)


@dataclass
class SweepResult:
    sizes: tuple
    rows: list  # (model, size, seed, accuracy)

    def summary(self) -> dict:
        """(model, size) -> (mean, spread)."""
        groups: dict = {}
        for m, size, _, acc in self.rows:
            groups.setdefault((m, size), []).append(acc)
        return {k: (float(np.mean(v)), _spread(v)) for k, v in groups.items()}

    def drop(self, model: str, hi: int, lo: int) -> float:
        s = self.summary()
        return s[(model, hi)][0] - s[(model, lo)][0]

    def to_csv(self) -> str:
        s = self.summary()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for m, size, seed, acc in self.rows:
            mean, sd = s[(m, size)]
            w.writerow([m, size, seed, repr(acc), repr(mean), repr(sd)])
        return buf.getvalue()


def run_size_sweep(cfg: ExperimentConfig = ExperimentConfig(), sizes: Sequence[int] = (200, 150, 100, 50),
                   models: Sequence[str] = SWEEP_MODELS) -> SweepResult:
    """Accuracy of RLN and the baselines as the labeled training set shrinks."""
    bad = set(models) - set(SWEEP_MODELS)
    if bad:
        raise ExperimentError(f"unknown models {sorted(bad)}")
    rows = []
    for seed in cfg.seeds:
        sd = build_split(cfg, seed)
        _, y_test = _test_arrays(sd.split)
        for size in sizes:
            split = subsample_split(sd.split, int(size))
            model = _fit(split, cfg.train.replace(seed=seed), "rln", seed)
            preds = _baseline_predictions(model, split, cfg, seed, models)
            for m in models:
                rows.append((m, int(size), int(seed), score(y_test, preds[m]).accuracy))
    order = {m: i for i, m in enumerate(models)}
    rows.sort(key=lambda r: (order[r[0]], -r[1], r[2]))
    return SweepResult(tuple(int(s) for s in sizes), rows)
