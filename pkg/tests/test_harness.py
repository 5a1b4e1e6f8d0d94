import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from switchdiag.baselines import CnnConfig
from switchdiag.features import class_counts
from switchdiag.harness import (ABLATIONS, SWEEP_HEADER, ExperimentConfig, ExperimentError, build_split,
                                dumps_reports, reports_csv, run_ablations, run_baseline_comparison,
                                run_main_experiment, run_size_sweep, score, subsample_split,
                                variant_config)
from switchdiag.simulator import ScenarioConfig
from switchdiag.training import TrainConfig, fit

TINY = ExperimentConfig(train=TrainConfig(epochs=8), seeds=(0, 1), svm_epochs=40,
                        cnn=CnnConfig(epochs=2))


@pytest.fixture(scope="module")
def main_reports():
    return run_main_experiment(TINY)


# ---------------------------------------------------------------------------
# scoring


@given(st.lists(st.tuples(st.integers(1, 7), st.integers(1, 7)), min_size=1, max_size=80))
def test_confusion_identities(pairs):
    t, p = zip(*pairs)
    r = score(t, p)
    cm = np.array(r.confusion)
    assert cm.shape == (7, 7) and cm.sum() == len(pairs)
    for k in range(1, 8):
        assert cm[k - 1].sum() == t.count(k)
        if t.count(k):
            assert r.per_class[k] == cm[k - 1, k - 1] / t.count(k)
        else:
            assert r.per_class[k] is None
    assert r.accuracy == np.trace(cm) / cm.sum()


def test_score_rejects_mismatch():
    with pytest.raises(ExperimentError):
        score([1, 2], [1])


def test_report_confusion_matches_test_counts(main_reports):
    strong, weak = main_reports
    for rep in (strong, weak):
        for r in rep.results:
            sd = build_split(TINY, r.seed)
            counts = class_counts(sd.split.test)
            cm = np.array(r.confusion)
            assert {k: int(cm[k - 1].sum()) for k in counts} == counts
            assert r.accuracy == np.trace(cm) / cm.sum()
        assert rep.mean == pytest.approx(np.mean([r.accuracy for r in rep.results]))


# ---------------------------------------------------------------------------
# main experiment


def test_main_arms_share_partitions(main_reports):
    strong, weak = main_reports
    assert [r.fingerprint for r in strong.results] == [r.fingerprint for r in weak.results]
    assert strong.config["train"]["lam"] == 0.0 and strong.config["train"]["mu"] == 0.0
    assert weak.config["train"]["lam"] == TINY.train.lam
    assert "pseudo_accuracy" in weak.results[0].extras and strong.results[0].extras == {}


def test_reports_are_byte_reproducible(main_reports):
    again = run_main_experiment(TINY)
    assert dumps_reports(main_reports) == dumps_reports(again)
    assert reports_csv(main_reports) == reports_csv(again)
    doc = json.loads(dumps_reports(main_reports))
    assert doc["schema"] == 1
    assert doc["reports"][0]["config"]["seeds"] == [0, 1]
    assert "wall_clock_s" not in doc["reports"][0]
    assert "wall_clock_s" in json.loads(dumps_reports(main_reports, timing=True))["reports"][0]


def test_zero_noise_saturates_both_arms():
    cfg = ExperimentConfig(scenario=ScenarioConfig(noise_level=0.0), seeds=(0,))
    strong, weak = run_main_experiment(cfg)
    assert strong.mean >= 0.99 and weak.mean >= 0.99


def test_split_uses_scenario_seed_and_hides_labels():
    a, b = build_split(TINY, 0), build_split(TINY, 1)
    assert a.fingerprint != b.fingerprint
    assert build_split(TINY, 0).fingerprint == a.fingerprint
    assert len(a.split.support) + len(a.split.query) == 200 and len(a.split.test) == 200
    assert len(a.split.unlabeled) == len(a.hidden_labels) == 478
    assert not any(hasattr(s, "y") for s in a.split.unlabeled)


# ---------------------------------------------------------------------------
# ablations


def test_ablation_variants():
    out = run_ablations(replace(TINY, seeds=(0,)))
    assert [name for name, _ in out] == list(ABLATIONS) == [
        "complete", "no_mapping", "no_radius", "no_pseudo_loss", "no_consistency"]
    fps = {rep.results[0].fingerprint for _, rep in out}
    assert len(fps) == 1
    cfgs = {name: rep.config["train"] for name, rep in out}
    assert cfgs["no_mapping"]["use_encoder"] is False
    assert cfgs["no_radius"]["use_radius"] is False
    assert cfgs["no_pseudo_loss"]["lam"] == 0.0 and cfgs["no_consistency"]["mu"] == 0.0
    with pytest.raises(ExperimentError):
        variant_config(TrainConfig(), "no_everything")


def test_no_mapping_variant_has_no_encoder():
    sd = build_split(TINY, 0)
    model = fit(sd.split, variant_config(TrainConfig(epochs=2), "no_mapping"))
    assert model.encoder is None


def test_unlabeled_perturbation_inert_without_unlabeled_losses():
    sd = build_split(TINY, 0)
    cfg = variant_config(TrainConfig(epochs=10, mu=0.0), "no_pseudo_loss")
    moved = [type(s)(type(s.x)(s.x.values * 1.5), s.id) for s in sd.split.unlabeled]
    from switchdiag.training import dumps_model
    assert dumps_model(fit(sd.split, cfg)) == dumps_model(fit(sd.split.with_unlabeled(moved), cfg))


# ---------------------------------------------------------------------------
# baselines and sweep


def test_baseline_comparison_structure():
    reps = run_baseline_comparison(replace(TINY, seeds=(0,)))
    assert [r.name for r in reps] == ["rln", "svm", "knn", "cnn"]
    assert len({r.results[0].fingerprint for r in reps}) == 1
    for r in reps:
        assert r.confusion.sum() == 200
        assert r.mean == pytest.approx(np.trace(r.confusion) / 200)
    rows = reports_csv(reps).strip().splitlines()
    assert rows[0].split(",") == ["name"] + [f"class{k}" for k in range(1, 8)] + ["mean", "std"]
    assert len(rows) == 5


def test_sweep_rows_and_full_size_consistency(main_reports):
    sweep = run_size_sweep(TINY, sizes=(200, 50))
    assert len(sweep.rows) == 4 * 2 * 2
    lines = sweep.to_csv().strip().splitlines()
    assert len(lines) == 4 * 2 * 2 + 1 and tuple(lines[0].split(",")) == SWEEP_HEADER
    _, weak = main_reports
    rln_full = [acc for m, size, _, acc in sweep.rows if m == "rln" and size == 200]
    assert rln_full == weak.accuracies
    assert sweep.drop("rln", 200, 50) == pytest.approx(
        sweep.summary()[("rln", 200)][0] - sweep.summary()[("rln", 50)][0])


def test_subsample_is_stratified_and_nested():
    sd = build_split(TINY, 0)
    assert subsample_split(sd.split, 200) is sd.split
    small = subsample_split(sd.split, 50)
    assert len(small.support) + len(small.query) == 50
    assert set(class_counts(small.support)) == set(range(1, 8))
    assert {s.id for s in small.support} <= {s.id for s in sd.split.support}
    assert small.test == sd.split.test and small.unlabeled == sd.split.unlabeled
    with pytest.raises(ExperimentError):
        subsample_split(sd.split, 6)


def test_config_round_trip():
    d = json.loads(json.dumps(TINY.to_dict()))
    assert ExperimentConfig.from_dict(d).to_dict() == TINY.to_dict()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"seeds": []})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"colour": 1})
