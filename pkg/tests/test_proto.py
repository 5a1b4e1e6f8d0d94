import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from switchdiag.nnet import MlpParams, init_mlp, mlp_forward
from switchdiag.proto import (DistanceTable, ProtoError, PseudoLabel, assign_pseudo_labels, classify,
                              compute_prototypes, distance_stats, normalized_distances, predict_radii,
                              update_prototypes)

seeds = st.integers(0, 2**32 - 1)


def _instance(seed):
    return oracles.random_instance(np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# centers


def test_one_sample_per_class_is_its_own_center(rng):
    V = rng.standard_normal((7, 8))
    P = compute_prototypes(V, range(1, 8))
    assert np.array_equal(P.centers, V)
    assert P.counts == (1,) * 7


def test_midpoint_center():
    P = compute_prototypes([[0.0] * 8, [2.0] * 8], [3, 3])
    assert P.center(3).tolist() == [1.0] * 8


def test_centers_match_oracle_on_50_vectors(rng):
    V = rng.standard_normal((50, 8))
    y = np.r_[np.arange(1, 8), rng.integers(1, 8, 43)]
    P = compute_prototypes(V, y)
    assert np.allclose(P.centers, oracles.centers(V, y, range(1, 8)), rtol=0, atol=1e-12)


def test_missing_class_raises(rng):
    with pytest.raises(ProtoError, match="class 4"):
        compute_prototypes(rng.standard_normal((3, 8)), [1, 2, 3], classes=[1, 2, 3, 4])


# ---------------------------------------------------------------------------
# normalized distances


def test_equidistant_column_is_all_ones():
    C = compute_prototypes([[0.0, 0.0]], [1])
    U = np.array([[1.0, 0.0], [0.0, -1.0], [0.6, 0.8]])
    t = normalized_distances(U, C)
    assert np.allclose(t.normalized[:, 0], 1.0, rtol=0, atol=1e-15)


def test_two_sample_normalization():
    C = compute_prototypes([[0.0]], [1])
    t = normalized_distances([[1.0], [np.sqrt(3.0)]], C)
    assert np.allclose(t.raw[:, 0], [1.0, 3.0], atol=1e-15)
    assert np.allclose(t.normalized[:, 0], [0.5, 1.5], atol=1e-15)


def test_degenerate_column_raises():
    C = compute_prototypes([[1.0, 1.0], [5.0, 5.0]], [1, 2])
    with pytest.raises(ProtoError, match="degenerate class column"):
        normalized_distances([[1.0, 1.0], [1.0, 1.0]], C)


@given(seeds)
def test_normalized_table_matches_oracle_and_averages_to_one(seed):
    V, y, U, classes, _ = _instance(seed)
    P = compute_prototypes(V, y)
    t = normalized_distances(U, P)
    raw, norm = oracles.normalized(U, P.centers)
    assert np.allclose(t.raw, raw, rtol=0, atol=1e-12)
    assert np.allclose(t.normalized, norm, rtol=0, atol=1e-12)
    assert np.allclose(t.normalized.mean(axis=0), 1.0, rtol=0, atol=1e-12)
    assert np.all(t.raw >= 0)


# ---------------------------------------------------------------------------
# statistics and radii


def test_stats_of_one_to_five():
    s = distance_stats([1, 2, 3, 4, 5])
    assert s[0] == 5 and s[1] == 3 and s[2] == 2
    assert s[3] == pytest.approx(0.0, abs=1e-15)
    assert s[4] == pytest.approx(1.7, abs=1e-14)


def test_constant_column_convention():
    assert distance_stats([1, 1, 1]).tolist() == [1, 1, 0, 0, 0]


def test_stats_need_two_values():
    with pytest.raises(ProtoError):
        distance_stats([1.0])


@given(st.lists(st.floats(0, 100), min_size=2, max_size=30))
def test_stats_match_central_moment_oracle(values):
    d = [float(v) for v in values]
    n = len(d)
    mu = sum(d) / n
    m2 = sum((x - mu) ** 2 for x in d) / n
    s = distance_stats(d)
    assert s[0] == max(d)
    assert s[1] == pytest.approx(mu, rel=1e-12, abs=1e-12)
    assert s[2] == pytest.approx(m2, rel=1e-9, abs=1e-12)
    if m2 > 1e-6:
        m3 = sum((x - mu) ** 3 for x in d) / n
        m4 = sum((x - mu) ** 4 for x in d) / n
        assert s[3] == pytest.approx(m3 / m2 ** 1.5, rel=1e-6, abs=1e-9)
        assert s[4] == pytest.approx(m4 / m2 ** 2, rel=1e-6)
        assert s[4] >= 1.0 - 1e-9  # kurtosis bound for any distribution


def _table(norm):
    norm = np.asarray(norm, dtype=np.float64)
    return DistanceTable(norm.copy(), norm)


def test_zero_radius_network_gives_ln2(rng):
    net = MlpParams([np.zeros((16, 5)), np.zeros((1, 16))], [np.zeros(16), np.zeros(1)])
    r = predict_radii(net, _table(rng.random((6, 7))))
    assert np.allclose(r.radii, np.log(2.0), rtol=0, atol=1e-15)


def test_identical_stats_identical_radii(rng):
    col = rng.random(9)
    r = predict_radii(init_mlp((5, 16, 1), rng), _table(np.column_stack([col, col])))
    assert r.radii[0] == r.radii[1]


def test_radii_match_forward_oracle(rng):
    net = init_mlp((5, 16, 1), rng)
    table = _table(rng.random((10, 4)) * 2)
    r = predict_radii(net, table)
    for k in range(4):
        z = mlp_forward(net, distance_stats(table.normalized[:, k]))[0][0]
        assert r.radii[k] == pytest.approx(np.log1p(np.exp(z)), abs=1e-12)
    assert np.all(r.radii > 0)


def test_radius_net_must_take_five_inputs(rng):
    with pytest.raises(ProtoError):
        predict_radii(init_mlp((4, 16, 1), rng), _table(rng.random((5, 2))))


# ---------------------------------------------------------------------------
# classification


def test_equidistant_is_uniform():
    C = compute_prototypes(np.eye(7) * 3.0, range(1, 7 + 1))
    p, label = classify(np.zeros(7), C)
    assert np.allclose(p, 1 / 7, rtol=0, atol=1e-15)
    assert label == 1


def test_dominant_center():
    C = np.zeros((7, 8))
    for k in range(1, 7):
        C[k, k] = 10.0  # squared distance 100 from the origin
    p, label = classify(np.zeros(8), compute_prototypes(C, range(1, 8)))
    assert label == 1
    assert abs(p[0] - 1.0 / (1.0 + 6.0 * np.exp(-100.0))) < 1e-20


def test_classify_rejects_non_finite():
    C = compute_prototypes([[0.0, 0.0]], [1])
    with pytest.raises(ValueError):
        classify([np.nan, 0.0], C)


@given(seeds)
def test_probabilities_match_oracle(seed):
    rng = np.random.default_rng(seed)
    C = compute_prototypes(rng.standard_normal((3, 8)), [1, 2, 3])
    v = rng.standard_normal(8)
    p, label = classify(v, C)
    assert np.allclose(p, oracles.softmax_probs(v, C.centers), rtol=0, atol=1e-12)
    assert np.all(p > 0) and abs(p.sum() - 1.0) <= 1e-12
    assert label == C.classes[int(np.argmax(oracles.softmax_probs(v, C.centers)))]


@given(seeds, st.floats(0.0, 50.0))
def test_argmax_invariant_to_common_distance_offset(seed, shift):
    # adding a dimension with equal offset for all centers adds a constant to every distance
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((5, 8))
    v = rng.standard_normal(8)
    _, a = classify(v, compute_prototypes(C, range(1, 6)))
    C2 = np.column_stack([C, np.zeros(5)])
    _, b = classify(np.r_[v, np.sqrt(shift)], compute_prototypes(C2, range(1, 6)))
    assert a == b


# ---------------------------------------------------------------------------
# pseudo-labels and corrected centers


def test_zero_and_large_radii(rng):
    V, y, U, classes, _ = oracles.random_instance(rng)
    P = compute_prototypes(V, y)
    t = normalized_distances(U, P)
    assert not any(p.in_radius for p in assign_pseudo_labels(t, np.zeros(len(classes)), U, P))
    assert all(p.in_radius for p in assign_pseudo_labels(t, np.full(len(classes), 1e9), U, P))


def test_hand_enumerated_membership():
    # 2 classes on a line, centers at 0 and 10; unlabeled at -1, 1, 4, 6, 12
    P = compute_prototypes([[0.0], [10.0]], [1, 2])
    U = np.array([[-1.0], [1.0], [4.0], [6.0], [12.0]])
    t = normalized_distances(U, P)
    # raw to c1: 1, 1, 16, 36, 144 (mean 39.6); to c2: 121, 81, 36, 16, 4 (mean 51.6)
    assert np.allclose(t.normalized[:, 0], np.array([1, 1, 16, 36, 144]) / 39.6)
    assert np.allclose(t.normalized[:, 1], np.array([121, 81, 36, 16, 4]) / 51.6)
    radii = np.array([0.3, 0.2])
    got = [(p.label, p.in_radius) for p in assign_pseudo_labels(t, radii, U, P)]
    # d~: 0.025, 0.025, 0.404 (class 1); 0.310, 0.078 (class 2)
    assert got == [(1, True), (1, True), (1, False), (2, False), (2, True)]


def test_ties_go_to_lowest_class():
    P = compute_prototypes([[-1.0], [1.0]], [1, 2])
    t = normalized_distances([[0.0], [3.0]], P)
    assert assign_pseudo_labels(t, [10.0, 10.0], [[0.0], [3.0]], P)[0].label == 1


def test_no_pseudo_reproduces_base_centers_exactly(rng):
    V = rng.standard_normal((12, 8))
    y = np.r_[1, 2, 3, rng.integers(1, 4, 9)]
    base = compute_prototypes(V, y)
    U = rng.standard_normal((4, 8))
    out = update_prototypes(V, y, U, [PseudoLabel(i, 1, False) for i in range(4)])
    assert np.array_equal(out.centers, base.centers) and out.counts == base.counts
    assert np.array_equal(update_prototypes(V, y, np.zeros((0, 8)), []).centers, base.centers)


def test_two_point_corrected_center(rng):
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    out = update_prototypes([a], [4], [b], [PseudoLabel(0, 4, True)])
    assert np.allclose(out.center(4), (a + b) / 2, rtol=0, atol=1e-15)
    assert out.counts == (2,)


@given(seeds)
def test_pseudo_and_corrected_match_oracle(seed):
    V, y, U, classes, radii = _instance(seed)
    P = compute_prototypes(V, y)
    t = normalized_distances(U, P)
    pl = assign_pseudo_labels(t, radii, U, P)
    expected = oracles.pseudo(U, P.centers, radii, classes)
    assert [(p.label, p.in_radius) for p in pl] == expected
    out = update_prototypes(V, y, U, pl)
    ref = oracles.corrected_centers(V, y, U, [e[0] for e in expected], [e[1] for e in expected], classes)
    assert np.allclose(out.centers, ref, rtol=0, atol=1e-12)


@given(seeds, st.integers(0, 6), st.floats(0.0, 3.0))
def test_raising_a_radius_never_shrinks_its_set(seed, which, extra):
    V, y, U, classes, radii = _instance(seed)
    k = which % len(classes)
    P = compute_prototypes(V, y)
    t = normalized_distances(U, P)
    before = {p.index for p in assign_pseudo_labels(t, radii, U, P) if p.in_radius and p.label == classes[k]}
    bigger = radii.copy()
    bigger[k] += extra
    after = {p.index for p in assign_pseudo_labels(t, bigger, U, P) if p.in_radius and p.label == classes[k]}
    assert before <= after


@given(seeds)
def test_permutation_invariance(seed):
    V, y, U, classes, _ = _instance(seed)
    rng = np.random.default_rng(seed + 1)
    net = init_mlp((5, 16, 1), rng)
    pl, pu = rng.permutation(len(y)), rng.permutation(len(U))

    def run(V, y, U):
        P = compute_prototypes(V, y)
        t = normalized_distances(U, P)
        r = predict_radii(net, t)
        pseudo = assign_pseudo_labels(t, r, U, P)
        C = update_prototypes(V, y, U, pseudo)
        return P.centers, r.radii, C.centers, sorted((tuple(U[p.index]), p.label, p.in_radius) for p in pseudo)

    a, b = run(V, y, U), run(V[pl], y[pl], U[pu])
    for x, z in zip(a[:3], b[:3]):
        assert np.allclose(x, z, rtol=0, atol=1e-12)
    assert [(p[1], p[2]) for p in a[3]] == [(p[1], p[2]) for p in b[3]]
