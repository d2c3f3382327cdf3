import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from oodbench import metrics
from oodbench.errors import ConfigError, DataError

score_lists = st.lists(st.floats(-5, 5).map(lambda v: round(v, 1)), min_size=1, max_size=40)


def _random_scores(rng, n, m, tie_prob=0.5):
    ids = rng.normal(1.0, 1.0, n)
    oods = rng.normal(0.0, 1.0, m)
    if rng.uniform() < tie_prob:
        ids = np.round(ids, 1)
        oods = np.round(oods, 1)
    return ids, oods


def test_fpr_perfectly_separated():
    assert metrics.fpr_at_tpr([2.0, 3.0, 4.0], [0.0, 1.0]) == 0.0


def test_fpr_hand_example():
    got = metrics.fpr_at_tpr([0.9, 0.8, 0.7, 0.6], [0.65, 0.5], 0.95)
    assert got == 0.5


def test_fpr_identical_multisets_lower_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = np.round(rng.normal(size=rng.integers(5, 60)), 1)
        got = metrics.fpr_at_tpr(scores, scores, 0.95)
        assert got >= 0.95 - 1.0 / scores.size - 1e-12


def test_fpr_empty_raises():
    with pytest.raises(DataError):
        metrics.fpr_at_tpr([], [1.0])


def test_auroc_perfect_and_symmetric():
    assert metrics.auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    scores = [0.3, 0.5, 0.5, 0.9]
    assert metrics.auroc(scores, scores) == 0.5


def test_auroc_hand_example():
    assert metrics.auroc([0.9, 0.4], [0.5, 0.1]) == 0.75


def test_auroc_complement_identity_exact():
    rng = np.random.default_rng(1)
    for _ in range(50):
        ids, oods = _random_scores(rng, int(rng.integers(1, 50)), int(rng.integers(1, 50)))
        assert metrics.auroc(ids, oods) + metrics.auroc(oods, ids) == 1.0


def test_aupr_perfect_separation():
    assert metrics.aupr([2.0, 3.0], [0.0, 1.0]) == 1.0


def test_aupr_all_equal_is_base_rate():
    assert metrics.aupr([1.0, 1.0, 1.0], [1.0]) == pytest.approx(0.75)


def test_aupr_hand_example_matches_oracle():
    got = metrics.aupr([0.9, 0.4], [0.5, 0.1])
    assert got == pytest.approx(oracles.aupr_sweep([0.9, 0.4], [0.5, 0.1]), abs=1e-15)
    assert got == pytest.approx(5.0 / 6.0, rel=1e-12)


def test_metrics_match_oracles_with_ties():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n, m = int(rng.integers(1, 300)), int(rng.integers(1, 300))
        ids, oods = _random_scores(rng, n, m)
        assert abs(metrics.auroc(ids, oods) - oracles.auroc_pairwise(ids, oods)) < 1e-12
        assert abs(metrics.aupr(ids, oods) - oracles.aupr_sweep(ids, oods)) < 1e-12
        assert abs(metrics.fpr_at_tpr(ids, oods, 0.95)
                   - oracles.fpr_at_tpr_sweep(ids, oods, 0.95)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(score_lists, score_lists, st.sampled_from(["exp", "affine"]))
def test_rank_metrics_invariant_under_monotone_transform(ids, oods, transform):
    ids = np.asarray(ids)
    oods = np.asarray(oods)
    if transform == "exp":
        t = lambda v: np.exp(v / 5.0)
    else:
        t = lambda v: 3.0 * v + 1.0
    assert metrics.auroc(t(ids), t(oods)) == pytest.approx(metrics.auroc(ids, oods), abs=1e-12)
    assert metrics.aupr(t(ids), t(oods)) == pytest.approx(metrics.aupr(ids, oods), abs=1e-12)
    assert metrics.fpr_at_tpr(t(ids), t(oods)) == pytest.approx(
        metrics.fpr_at_tpr(ids, oods), abs=1e-12)


def test_id_accuracy_one_hot():
    labels = np.array([2, 0, 1])
    logits = np.eye(3)[labels]
    assert metrics.id_accuracy(logits, labels) == 1.0


def test_id_accuracy_tie_rule():
    assert metrics.id_accuracy(np.zeros((4, 3)), np.zeros(4, dtype=int)) == 1.0
    assert metrics.id_accuracy(np.zeros((4, 3)), np.ones(4, dtype=int)) == 0.0


def test_id_accuracy_hand_example():
    logits = np.array([[0.1, 0.9, 0.0], [2.0, 1.0, 3.0], [0.0, 0.5, 0.2]])
    labels = np.array([1, 2, 0])
    assert metrics.id_accuracy(logits, labels) == pytest.approx(2.0 / 3.0)


def test_mmd_same_set_is_zero():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(20, 3))
    assert metrics.mmd_rbf(x, x, 1.0) == 0.0


def test_mmd_singletons_closed_form():
    x = np.array([[0.0, 0.0]])
    y = np.array([[1.0, 1.0]])
    expected = 2.0 - 2.0 * np.exp(-2.0 / (2.0 * 0.7 ** 2))
    assert metrics.mmd_rbf(x, y, 0.7) == pytest.approx(expected, rel=1e-12)


def test_mmd_matches_double_sum_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=(int(rng.integers(2, 60)), 2))
        y = rng.normal(0.5, 1.0, size=(int(rng.integers(2, 60)), 2))
        bw = float(rng.uniform(0.3, 2.0))
        assert metrics.mmd_rbf(x, y, bw) == pytest.approx(
            oracles.mmd_double_sum(x, y, bw), abs=1e-12)


def test_mmd_exact_symmetry():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 2))
    y = rng.normal(size=(45, 2))
    assert metrics.mmd_rbf(x, y, 0.8) == metrics.mmd_rbf(y, x, 0.8)


def test_mmd_median_heuristic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(20, 2))
    y = rng.normal(3.0, 1.0, size=(20, 2))
    assert metrics.mmd_rbf(x, y) > 0.0
    with pytest.raises(ConfigError):
        metrics.mmd_rbf(x, y, bandwidth=-1.0)


def test_report_roundtrip_and_average():
    ids = np.array([2.0, 3.0, 4.0])
    report = metrics.assemble_report(
        ids, {"ring": np.array([0.0, 1.0]), "blob": np.array([5.0, 6.0])},
        method="oe", score_kind="energy", id_acc=0.9, seed=1, config_digest="abc")
    names = [r.set_name for r in report.results]
    assert names == ["ring", "blob"]
    assert report.average.fpr95 == pytest.approx(
        np.mean([r.fpr95 for r in report.results]))
    again = metrics.DetectionReport.from_json(report.to_json())
    assert json.loads(again.to_json()) == json.loads(report.to_json())


def test_detection_report_identical_sets_auroc_half():
    from oodbench import model
    from oodbench.scoring import ScoreSpec

    m = model.init_model([2, 8, 3], seed=0)
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (30, 2))
    labels = rng.integers(0, 3, 30)
    report = metrics.detection_report(m, ScoreSpec(kind="msp"), x, {"same": x}, labels)
    assert report.results[0].auroc == 0.5
