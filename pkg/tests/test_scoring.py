import math

import numpy as np
import pytest

from oodbench import model, scoring
from oodbench.errors import ConfigError, DataError, NumericError, ShapeError


def test_msp_uniform_logits():
    np.testing.assert_allclose(scoring.msp_score(np.zeros((3, 10))), 0.1, atol=1e-15)


def test_msp_two_class_hand_value():
    got = scoring.msp_score(np.array([[1.0, 0.0]]))
    assert got[0] == pytest.approx(math.e / (math.e + 1.0), rel=1e-12)


def test_msp_saturation():
    logits = np.zeros((1, 5))
    logits[0, 0] = 1000.0
    assert scoring.msp_score(logits)[0] == pytest.approx(1.0, abs=1e-12)


def test_msp_requires_two_classes():
    with pytest.raises(ShapeError):
        scoring.msp_score(np.zeros((3, 1)))


def test_energy_zero_logits():
    got = scoring.energy_score(np.zeros((2, 10)), 1.0)
    np.testing.assert_allclose(got, math.log(10.0), rtol=1e-12)


def test_energy_pair_hand_value():
    assert scoring.energy_score(np.array([[1.0, 1.0]]), 1.0)[0] == pytest.approx(
        1.0 + math.log(2.0), rel=1e-12)


def test_energy_single_class_is_logit():
    for t in (0.5, 1.0, 10.0):
        assert scoring.energy_score(np.array([[3.7]]), t)[0] == pytest.approx(3.7, rel=1e-12)


def test_energy_additive_constant():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 6))
    base = scoring.energy_score(logits, 1.0)
    shifted = scoring.energy_score(logits + 2.0, 1.0)
    np.testing.assert_allclose(shifted, base + 2.0, atol=1e-12)


def test_energy_rejects_bad_temperature():
    with pytest.raises(ConfigError):
        scoring.energy_score(np.zeros((1, 2)), 0.0)


def test_odin_eps0_t1_equals_msp_bitwise():
    m = model.init_model([3, 8, 4], seed=5)
    x = np.random.default_rng(1).uniform(0.05, 0.95, (10, 3))
    odin = scoring.odin_score(m, x, temperature=1.0, eps=0.0)
    msp = scoring.msp_score(model.forward(m, x))
    assert odin.tobytes() == msp.tobytes()


def test_odin_defaults_match_reference_values():
    assert scoring.ODIN_DEFAULT_TEMPERATURE == 1.0e4
    assert scoring.ODIN_DEFAULT_EPSILON == 1.4e-3
    spec = scoring.ScoreSpec.odin_default()
    assert spec.temperature == 1.0e4 and spec.odin_epsilon == 1.4e-3


def test_odin_linear_model_score_increases():
    # Single affine layer: one sign step moves the top-class confidence up.
    w = np.array([[2.0, -1.0], [0.5, 1.5]])
    m = model.MlpClassifier((2, 2), (w,), (np.zeros(2),))
    x = np.array([[0.5, 0.5], [0.4, 0.6]])
    base = scoring.msp_score(model.forward(m, x))
    pushed = scoring.odin_score(m, x, temperature=1.0, eps=0.01)
    assert np.all(pushed >= base)
    assert np.any(pushed > base)


def test_fit_mahalanobis_two_point_classes():
    feats = np.array([[-1.0], [-1.0], [1.0], [1.0]])
    labels = np.array([0, 0, 1, 1])
    stats = scoring.fit_mahalanobis(feats, labels, gamma=1e-6)
    np.testing.assert_allclose(stats.means, [[-1.0], [1.0]])
    assert stats.covariance[0, 0] == pytest.approx(1e-6, rel=1e-9)


def test_fit_mahalanobis_translation_invariance():
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(20, 3))
    labels = rng.integers(0, 2, 20)
    s1 = scoring.fit_mahalanobis(feats, labels, gamma=1e-6)
    shifted = feats.copy()
    shifted[labels == 1] += 5.0
    s2 = scoring.fit_mahalanobis(shifted, labels, gamma=1e-6)
    np.testing.assert_allclose(s1.covariance, s2.covariance, atol=1e-9)


def test_fit_mahalanobis_symmetric():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, 30)
    stats = scoring.fit_mahalanobis(feats, labels)
    np.testing.assert_allclose(stats.covariance, stats.covariance.T, atol=1e-12)


def test_fit_mahalanobis_small_class_rejected():
    with pytest.raises(DataError):
        scoring.fit_mahalanobis(np.ones((3, 2)), np.array([0, 0, 1]))


def test_fit_mahalanobis_factorization_failure():
    with pytest.raises(NumericError):
        scoring.GaussianStats(means=np.zeros((1, 2)),
                              covariance=np.array([[0.0, 0.0], [0.0, -1.0]]), gamma=0.0)


def test_mahalanobis_score_at_mean_is_zero():
    feats = np.array([[-1.0], [-1.2], [1.0], [1.2]])
    stats = scoring.fit_mahalanobis(feats, np.array([0, 0, 1, 1]), gamma=1e-3)
    scores = scoring.mahalanobis_score(stats, stats.means)
    np.testing.assert_allclose(scores, 0.0, atol=1e-12)
    assert np.all(scoring.mahalanobis_score(stats, feats) <= 1e-12)


def test_mahalanobis_midpoint_hand_value():
    stats = scoring.GaussianStats(means=np.array([[-1.0], [1.0]]),
                                  covariance=np.array([[1.0]]), gamma=0.0)
    assert scoring.mahalanobis_score(stats, np.array([[0.0]]))[0] == pytest.approx(-1.0)


def test_mahalanobis_covariance_scaling():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(5, 3))
    base_cov = np.eye(3) * 2.0
    s1 = scoring.GaussianStats(means=np.zeros((2, 3)), covariance=base_cov, gamma=0.0)
    s2 = scoring.GaussianStats(means=np.zeros((2, 3)), covariance=4.0 * base_cov, gamma=0.0)
    np.testing.assert_allclose(scoring.mahalanobis_score(s2, feats),
                               scoring.mahalanobis_score(s1, feats) / 4.0, rtol=1e-12)


def test_ash_identity_at_zero_percentile():
    rng = np.random.default_rng(5)
    acts = rng.uniform(0, 1, (4, 6))
    out = scoring.ash_s(acts, 0.0)
    assert out.tobytes() == acts.tobytes()


def test_ash_hand_example():
    out = scoring.ash_s(np.array([[4.0, 3.0, 2.0, 1.0]]), 50.0)
    np.testing.assert_allclose(out, [[40.0 / 7.0, 30.0 / 7.0, 0.0, 0.0]], rtol=1e-12)


def test_ash_preserves_row_sums_and_argmax():
    rng = np.random.default_rng(6)
    acts = rng.uniform(0.01, 1, (10, 8))
    out = scoring.ash_s(acts, 60.0)
    np.testing.assert_allclose(out.sum(axis=1), acts.sum(axis=1), rtol=1e-12)
    np.testing.assert_array_equal(np.argmax(out, axis=1), np.argmax(acts, axis=1))


def test_ash_all_zero_row_flagged():
    acts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    with pytest.warns(UserWarning, match="unshaped"):
        out = scoring.ash_s(acts, 50.0)
    np.testing.assert_array_equal(out[0], [0.0, 0.0, 0.0])


def test_detect_rule():
    assert scoring.detect([0.9, 0.1], 0.5) == ["ID", "OOD"]
    assert scoring.detect([0.9, 0.1], -np.inf) == ["ID", "ID"]
    assert scoring.detect([0.5], 0.5) == ["ID"]  # ties are ID per the >= rule


def test_detect_with_calibrated_threshold():
    from oodbench import metrics

    rng = np.random.default_rng(7)
    id_scores = rng.normal(1.0, 0.3, 200)
    lam = metrics.tpr_threshold(id_scores, 0.95)
    decisions = scoring.detect(id_scores, lam)
    assert np.mean([d == "ID" for d in decisions]) >= 0.95


def test_compute_scores_dispatch():
    m = model.init_model([2, 8, 3], seed=9)
    x = np.random.default_rng(8).uniform(0, 1, (5, 2))
    for kind in ("msp", "energy", "odin", "ash_energy"):
        out = scoring.compute_scores(m, x, scoring.ScoreSpec(kind=kind))
        assert out.shape == (5,)
    feats = model.penultimate_features(m, x)
    stats = scoring.fit_mahalanobis(feats, np.array([0, 0, 1, 1, 1]), gamma=1e-3)
    out = scoring.compute_scores(m, x, scoring.ScoreSpec(kind="mahalanobis", stats=stats))
    assert out.shape == (5,)
    with pytest.raises(ConfigError):
        scoring.compute_scores(m, x, scoring.ScoreSpec(kind="mahalanobis"))


def test_score_spec_validation():
    with pytest.raises(ConfigError):
        scoring.ScoreSpec(kind="nope")
    with pytest.raises(ConfigError):
        scoring.ScoreSpec(kind="msp", temperature=0.0)
    with pytest.raises(ConfigError):
        scoring.ScoreSpec(kind="ash_energy", percentile=100.0)


def test_score_csv_export(tmp_path):
    path = tmp_path / "scores.csv"
    scoring.write_score_csv(path, [(0, "id_test", "msp", 0.5), (1, "ood_ring", "msp", 0.25)])
    lines = path.read_text().splitlines()
    assert lines[0] == "sample_id,set_name,score_kind,score"
    assert lines[1] == "0,id_test,msp,0.5"
