"""
Unit tests for the adversarial constraint engine
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timbre_lab.advconstraint import (
    Perturbation,
    PerturbationConfig,
    adv_loss,
    make_adversarial_target,
    optimize_many,
    optimize_perturbation,
    pgd_step,
)
from timbre_lab.audiofeat import MelSpectrogram
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import l1_loss
from timbre_lab.speakernet import classifier_hash, init_classifier, predict

N_MELS = 6
FRAMES = 5


def linear_toy(seed, min_eps):
    """
    2-class linear-softmax classifier over mean-pooled bins, and a mel it
    labels 0. The smallest l-inf perturbation that flips it to label 1 is
    gap / ||w_1 - w_0||_1; the bias is chosen so that this equals ``min_eps``.
    """
    rng = np.random.default_rng(seed)
    f = init_classifier(N_MELS, 2, [], pooling="mean", seed=seed)
    m = rng.uniform(-1.0, 1.0, size=(FRAMES, N_MELS))
    z = m.mean(axis=0)
    w_diff = f.weights[0][:, 1] - f.weights[0][:, 0]
    gap = min_eps * np.abs(w_diff).sum()
    f.biases[0] = np.array([gap + z @ w_diff, 0.0])
    return f, m


TOY_CFG = PerturbationConfig(eps_start=1.0, lr=0.005, max_iters=400, eps_min=0.01)


class TestPgdStep:
    """Test pgd_step"""

    def test_zero_gradient_is_fixed_point(self):
        p = Perturbation(delta=np.full((2, 2), 0.3), eps=0.5, lr=0.1)
        np.testing.assert_array_equal(pgd_step(p, np.zeros((2, 2))).delta, p.delta)

    def test_one_step_arithmetic(self):
        p = Perturbation.zeros((2, 3), eps=1.0, lr=0.1)
        np.testing.assert_allclose(pgd_step(p, np.ones((2, 3))).delta, np.full((2, 3), -0.1))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            pgd_step(Perturbation.zeros((2, 2), 1.0, 0.1), np.zeros((3, 2)))

    def test_fuzzed_steps_respect_budget(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            eps = float(rng.uniform(0.0, 1.0))
            p = Perturbation.zeros((3, 4), eps=eps, lr=float(rng.uniform(0.01, 0.5)))
            for _ in range(5):
                p = pgd_step(p, rng.normal(size=(3, 4)))
                assert np.max(np.abs(p.delta)) <= eps

    def test_over_budget_delta_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Perturbation(delta=np.full((1, 2), 0.6), eps=0.5, lr=0.1)


class TestPerturbationConfig:
    """Test schedule validation"""

    @pytest.mark.parametrize(
        "kwargs",
        [{"eps_start": -0.1}, {"eps_min": 0.0}, {"eps_decay": 1.0}, {"eps_decay": 0.0}, {"max_iters": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            PerturbationConfig(**kwargs).validate()

    def test_reference_defaults(self):
        cfg = PerturbationConfig()
        assert (cfg.eps_start, cfg.lr, cfg.max_iters) == (0.8, 8e-4, 1000)


class TestOptimizePerturbation:
    """Test optimize_perturbation"""

    def test_already_on_target_is_a_no_op(self):
        f, m = linear_toy(1, 0.3)
        outcome = optimize_perturbation(f, m, 0)
        assert outcome.success and outcome.iterations_used == 0
        assert not outcome.final_delta.any()

    def test_zero_budget_fails(self):
        f, m = linear_toy(2, 0.3)
        outcome = optimize_perturbation(f, m, 1, PerturbationConfig(eps_start=0.0))
        assert not outcome.success
        assert predict(f, m + outcome.final_delta) == 0

    def test_invalid_target(self):
        f, m = linear_toy(3, 0.3)
        with pytest.raises(InvalidArgumentError):
            optimize_perturbation(f, m, 2)

    def test_success_iff_budget_covers_closed_form_minimum(self):
        """Without tightening, PGD succeeds just above the analytic bound and fails just below"""
        rng = np.random.default_rng(10)
        for case in range(50):
            min_eps = float(rng.uniform(0.1, 0.8))
            f, m = linear_toy(100 + case, min_eps)
            above = PerturbationConfig(eps_start=min_eps * 1.05, lr=0.005, max_iters=400, tighten=False)
            below = PerturbationConfig(eps_start=min_eps * 0.95, lr=0.005, max_iters=400, tighten=False)
            assert optimize_perturbation(f, m, 1, above).success
            assert not optimize_perturbation(f, m, 1, below).success

    def test_decay_schedule_lands_within_one_step_of_minimum(self):
        rng = np.random.default_rng(11)
        for case in range(50):
            min_eps = float(rng.uniform(0.1, 0.8))
            f, m = linear_toy(200 + case, min_eps)
            outcome = optimize_perturbation(f, m, 1, TOY_CFG)
            assert outcome.success
            assert min_eps * (1 - 1e-9) <= outcome.final_eps <= min_eps / 0.9 * (1 + 1e-9)
            assert predict(f, m + outcome.final_delta) == 1
            assert np.max(np.abs(outcome.final_delta)) <= outcome.final_eps

    def test_monotone_success_in_budget(self):
        f, m = linear_toy(7, 0.4)
        flags = [
            optimize_perturbation(f, m, 1, PerturbationConfig(eps_start=e, lr=0.005, max_iters=400,
                                                              tighten=False)).success
            for e in np.linspace(0.05, 1.0, 20)
        ]
        assert flags == sorted(flags)

    def test_no_tightening_below_eps_min(self):
        f, m = linear_toy(8, 0.02)
        cfg = PerturbationConfig(eps_start=0.04, eps_min=0.05, lr=0.001, max_iters=200)
        outcome = optimize_perturbation(f, m, 1, cfg)
        assert outcome.success and outcome.final_eps == 0.04

    def test_classifier_untouched(self):
        f, m = linear_toy(9, 0.5)
        before = classifier_hash(f)
        optimize_perturbation(f, m, 1, TOY_CFG)
        assert classifier_hash(f) == before

    def test_record(self):
        f, m = linear_toy(4, 0.3)
        record = optimize_perturbation(f, m, 1, TOY_CFG).to_record("spk00-utt001", 1)
        assert set(record) == {"sampleId", "target", "success", "iterations", "finalEps", "finalLoss"}
        assert record["success"] is True

    def test_many_keeps_order_across_workers(self):
        cases = [linear_toy(300 + i, 0.2 + 0.1 * i) for i in range(4)]
        f = cases[0][0]
        mels = [m for _, m in cases]
        serial = optimize_many(f, mels, [1] * 4, TOY_CFG)
        threaded = optimize_many(f, mels, [1] * 4, TOY_CFG, workers=3)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.final_delta, b.final_delta)
            assert a.final_eps == b.final_eps


class TestAdversarialTarget:
    """Test make_adversarial_target and adv_loss"""

    def test_zero_delta_identity(self):
        m_hat = MelSpectrogram(values=np.arange(6.0).reshape(2, 3))
        out = make_adversarial_target(m_hat, Perturbation.zeros((2, 3), 0.5, 0.1))
        np.testing.assert_array_equal(out.values, m_hat.values)

    def test_constant_shift(self):
        m_hat = np.zeros((2, 3))
        out = make_adversarial_target(m_hat, Perturbation(delta=np.full((2, 3), 0.8), eps=0.8, lr=0.1))
        np.testing.assert_array_equal(out, np.full((2, 3), 0.8))

    @given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.0, max_value=2.0))
    @settings(max_examples=100, deadline=None)
    def test_property_l1_bounded_by_eps(self, seed, eps):
        rng = np.random.default_rng(seed)
        m_hat = rng.normal(size=(4, 5))
        delta = np.clip(rng.normal(size=(4, 5)), -eps, eps)
        m_adv = make_adversarial_target(m_hat, Perturbation(delta=delta, eps=eps, lr=0.1))
        assert l1_loss(m_adv, m_hat) <= eps + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            make_adversarial_target(np.zeros((2, 3)), Perturbation.zeros((3, 2), 0.5, 0.1))

    def test_success_branch_is_reconstruction(self):
        rng = np.random.default_rng(1)
        gt, hat, adv = rng.normal(size=(3, 4, 5))
        assert adv_loss(gt, hat, adv, True) == l1_loss(gt, hat)

    def test_failure_branch_degenerate(self):
        hat = np.ones((3, 3))
        assert adv_loss(np.zeros((3, 3)), hat, hat, False) == 0.0

    def test_failure_branch_constant_shift(self):
        hat = np.random.default_rng(2).normal(size=(4, 4))
        assert adv_loss(np.zeros((4, 4)), hat, hat + 0.8, False) == pytest.approx(0.8, abs=1e-12)

    def test_shape_mismatch_in_loss(self):
        with pytest.raises(InvalidArgumentError):
            adv_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), False)
