import numpy as np
import pytest

from oodbench import losses, model
from oodbench.errors import ConfigError
from oodbench.extrapolation import (
    ExtrapolationConfig,
    build_extrapolation_pool,
    largest_remainder_counts,
    mixup_combine,
    mixup_extrapolate,
    pgd_extrapolate,
    random_noise_extrapolate,
    select_subbatch,
)


@pytest.fixture(scope="module")
def small_model():
    return model.init_model([2, 16, 3], seed=77)


def _batch(n=6, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, (n, 2))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExtrapolationConfig(ratio=1.5)
    with pytest.raises(ConfigError):
        ExtrapolationConfig(epsilon=-0.1)
    with pytest.raises(ConfigError):
        ExtrapolationConfig(direction="sideways")
    with pytest.raises(ConfigError):
        ExtrapolationConfig(pool=((0.05, 0.4), (0.1, 0.4)))  # fractions sum to 0.8
    cfg = ExtrapolationConfig(pool=((0.05, 0.5), (0.125, 0.5)))
    assert cfg.pool == ((0.05, 0.5), (0.125, 0.5))


def test_default_step_size_traverses_ball():
    cfg = ExtrapolationConfig(epsilon=0.05, steps=5)
    assert cfg.effective_step_size() == pytest.approx(2 * 0.05 / 5)
    assert cfg.effective_step_size(0.125) == pytest.approx(2 * 0.125 / 5)
    assert ExtrapolationConfig(step_size=0.03).effective_step_size() == 0.03


def test_paper_default_configuration():
    cfg = ExtrapolationConfig()
    assert cfg.ratio == 0.5 and cfg.epsilon == 0.05 and cfg.steps == 5


def test_zero_steps_and_zero_epsilon_return_input_bitwise(small_model):
    x = _batch()
    for cfg in (ExtrapolationConfig(steps=0), ExtrapolationConfig(epsilon=0.0)):
        out = pgd_extrapolate(small_model, x, cfg)
        assert out.synthesized.tobytes() == x.tobytes()
        np.testing.assert_array_equal(out.initial_values, out.final_values)


def test_linf_constraint_and_domain(small_model):
    x = _batch(20, seed=3)
    cfg = ExtrapolationConfig(epsilon=0.07, steps=6)
    out = pgd_extrapolate(small_model, x, cfg)
    assert np.max(np.abs(out.synthesized - x)) <= 0.07 + 1e-12
    assert out.synthesized.min() >= 0.0 and out.synthesized.max() <= 1.0


def test_best_iterate_monotonicity_both_directions(small_model):
    x = _batch(12, seed=4)
    up = pgd_extrapolate(small_model, x, ExtrapolationConfig(direction="maximize"))
    assert np.all(up.final_values >= up.initial_values)
    down = pgd_extrapolate(small_model, x, ExtrapolationConfig(direction="minimize"))
    assert np.all(down.final_values <= down.initial_values)


def test_extrapolation_actually_moves_loss(small_model):
    x = _batch(12, seed=5)
    out = pgd_extrapolate(small_model, x, ExtrapolationConfig(epsilon=0.1, steps=5))
    assert np.mean(out.final_values) > np.mean(out.initial_values)


def test_recorded_values_match_uniform_loss(small_model):
    x = _batch(4, seed=6)
    out = pgd_extrapolate(small_model, x, ExtrapolationConfig(epsilon=0.05, steps=3))
    for i in range(len(x)):
        before = losses.oe_uniform_loss(model.forward(small_model, x[i:i + 1]))
        after = losses.oe_uniform_loss(model.forward(small_model, out.synthesized[i:i + 1]))
        assert out.initial_values[i] == pytest.approx(before, rel=1e-12)
        assert out.final_values[i] == pytest.approx(after, rel=1e-12)


def test_deterministic_given_same_inputs(small_model):
    x = _batch(8, seed=7)
    cfg = ExtrapolationConfig()
    a = pgd_extrapolate(small_model, x, cfg)
    b = pgd_extrapolate(small_model, x, cfg)
    assert a.synthesized.tobytes() == b.synthesized.tobytes()


def test_parallel_equals_sequential(small_model):
    x = _batch(16, seed=8)
    cfg = ExtrapolationConfig(epsilon=0.08, steps=4)
    seq = pgd_extrapolate(small_model, x, cfg, parallel=False)
    par = pgd_extrapolate(small_model, x, cfg, parallel=True)
    assert seq.synthesized.tobytes() == par.synthesized.tobytes()
    assert seq.final_values.tobytes() == par.final_values.tobytes()


def test_score_targets_move_their_score(small_model):
    from oodbench import scoring

    x = _batch(10, seed=9)
    msp_cfg = ExtrapolationConfig(target="msp", epsilon=0.1, steps=5)
    out = pgd_extrapolate(small_model, x, msp_cfg)
    before = scoring.msp_score(model.forward(small_model, x))
    after = scoring.msp_score(model.forward(small_model, out.synthesized))
    np.testing.assert_allclose(out.initial_values, before, rtol=1e-10)
    assert np.all(after >= before - 1e-12)

    en_cfg = ExtrapolationConfig(target="energy", epsilon=0.1, steps=5)
    out = pgd_extrapolate(small_model, x, en_cfg)
    e_before = scoring.energy_score(model.forward(small_model, x), 1.0)
    e_after = scoring.energy_score(model.forward(small_model, out.synthesized), 1.0)
    np.testing.assert_allclose(out.initial_values, e_before, rtol=1e-10)
    assert np.all(e_after >= e_before - 1e-12)


def test_linear_model_single_step_moves_by_alpha():
    # On an affine model, the uniform-loss gradient has a closed form:
    # softmax(xW)-weighted columns minus their mean; every coordinate with a
    # nonzero gradient moves by exactly alpha.
    w = np.array([[1.5, -0.5, 0.2], [-0.3, 0.8, 0.1]])
    m = model.MlpClassifier((2, 3), (w,), (np.zeros(3),))
    x = np.array([[0.5, 0.5]])
    alpha = 0.02
    cfg = ExtrapolationConfig(epsilon=0.5, steps=1, step_size=alpha, clamp=(-1.0, 2.0))
    out = pgd_extrapolate(m, x, cfg)
    p = np.exp(model.forward(m, x)) / np.exp(model.forward(m, x)).sum()
    grad = (p @ w.T) - w.mean(axis=1)
    expected = x + alpha * np.sign(grad)
    np.testing.assert_allclose(out.synthesized, expected, rtol=1e-12)


def test_select_subbatch_extremes_and_split():
    rng = np.random.default_rng(1)
    batch = _batch(128, seed=10)
    none_sel, all_kept = select_subbatch(batch, 0.0, rng)
    assert none_sel.shape[0] == 0
    assert all_kept.tobytes() == batch.tobytes()  # original order preserved
    all_sel, none_kept = select_subbatch(batch, 1.0, rng)
    assert all_sel.shape[0] == 128 and none_kept.shape[0] == 0
    half, rest = select_subbatch(batch, 0.5, rng)
    assert half.shape[0] == 64 and rest.shape[0] == 64
    combined = np.concatenate([half, rest])
    assert {tuple(r) for r in combined} == {tuple(r) for r in batch}


def test_select_subbatch_ceil_rounding():
    rng = np.random.default_rng(2)
    batch = _batch(5, seed=11)
    chosen, rest = select_subbatch(batch, 0.3, rng)
    assert chosen.shape[0] == 2  # ceil(1.5)
    assert rest.shape[0] == 3


def test_largest_remainder_counts():
    assert largest_remainder_counts([0.3, 0.7], 10) == [3, 7]
    assert largest_remainder_counts([1.0], 7) == [7]
    assert largest_remainder_counts([0.5, 0.5], 7) == [4, 3]  # tie goes to lower index
    assert sum(largest_remainder_counts([0.25, 0.25, 0.5], 9)) == 9


def test_pool_single_entry_equals_plain_pgd_bitwise(small_model):
    x = _batch(10, seed=12)
    cfg = ExtrapolationConfig(epsilon=0.06, steps=4, pool=((0.06, 1.0),))
    pooled = build_extrapolation_pool(small_model, x, cfg)
    plain = pgd_extrapolate(small_model, x, cfg, epsilon=0.06)
    assert pooled.synthesized.tobytes() == plain.synthesized.tobytes()
    assert pooled.final_values.tobytes() == plain.final_values.tobytes()


def test_pool_mixed_epsilons(small_model):
    x = _batch(8, seed=13)
    cfg = ExtrapolationConfig(steps=3, pool=((0.05, 0.5), (0.125, 0.5)))
    out = build_extrapolation_pool(small_model, x, cfg)
    assert out.synthesized.shape == x.shape
    np.testing.assert_array_equal(out.epsilons, [0.05] * 4 + [0.125] * 4)
    assert np.max(np.abs(out.synthesized[:4] - x[:4])) <= 0.05 + 1e-12
    assert np.max(np.abs(out.synthesized[4:] - x[4:])) <= 0.125 + 1e-12


def test_pool_empty_spec_rejected(small_model):
    cfg = ExtrapolationConfig()
    object.__setattr__(cfg, "pool", ())
    with pytest.raises(ConfigError):
        build_extrapolation_pool(small_model, _batch(4), cfg)


def test_random_noise_extrapolate():
    rng = np.random.default_rng(3)
    x = _batch(50, seed=14)
    assert random_noise_extrapolate(x, 0.0, rng).tobytes() == x.tobytes()
    out = random_noise_extrapolate(x, 0.05, rng)
    assert np.max(np.abs(out - x)) <= 0.05
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_random_noise_mean_is_centered():
    rng = np.random.default_rng(4)
    x = np.full((100_000, 1), 0.5)
    out = random_noise_extrapolate(x, 0.1, rng)
    noise = out - x
    sigma = 0.1 / np.sqrt(3.0)
    assert abs(noise.mean()) < 3.0 * sigma / np.sqrt(noise.size)


def test_mixup_combine_extremes():
    x = _batch(5, seed=15)
    partners = _batch(5, seed=16)
    assert mixup_combine(x, partners, np.ones(5)).tobytes() == x.tobytes()
    assert mixup_combine(x, partners, np.zeros(5)).tobytes() == partners.tobytes()


def test_mixup_extrapolate_draws_partner_per_sample():
    rng = np.random.default_rng(5)
    x = _batch(40, seed=17)
    partners = _batch(7, seed=18)
    out = mixup_extrapolate(x, partners, beta_a=1.0, beta_b=0.1, rng=rng)
    assert out.shape == x.shape
    with pytest.raises(ConfigError):
        mixup_extrapolate(x, np.zeros((0, 2)), rng=rng)


def test_origin_outside_domain_rejected(small_model):
    cfg = ExtrapolationConfig()
    with pytest.raises(ConfigError):
        pgd_extrapolate(small_model, np.array([[2.0, 0.5]]), cfg)
