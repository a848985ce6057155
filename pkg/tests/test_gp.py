import math

import numpy as np
import pytest

from fedsel.errors import ConfigError, ProjectionUndefined
from fedsel.gp import (
    GlobalDirection,
    adjust_reward,
    client_rng,
    gradient_projection,
    local_train,
    mgd_step,
    normalize_gp,
)
from fedsel.nn import MlpArch, SgdConfig, init_params, loss_and_grad


class TestMgdStep:
    def test_hand_example(self):
        w, d = mgd_step(np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.array([0.0, 2.0]), 0.5, 0.1)
        np.testing.assert_allclose(d, [0.5, 2.0])
        np.testing.assert_allclose(w, [0.45, 0.3])

    def test_zero_lr_leaves_params(self):
        p = np.array([1.0, -2.0])
        w, d = mgd_step(np.zeros(2), p, np.array([3.0, 3.0]), 0.9, 0.0)
        np.testing.assert_array_equal(w, p)
        np.testing.assert_array_equal(d, [3.0, 3.0])

    def test_does_not_mutate_inputs(self):
        m, p, g = np.ones(3), np.ones(3), np.ones(3)
        mgd_step(m, p, g, 0.5, 0.1)
        np.testing.assert_array_equal(m, np.ones(3))
        np.testing.assert_array_equal(p, np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            mgd_step(np.ones(2), np.ones(3), np.ones(3), 0.5, 0.1)


class TestGradientProjection:
    @pytest.mark.parametrize(
        "d, g, expected",
        [
            ([3.0, 4.0], [1.0, 0.0], 3.0),
            ([3.0, 4.0], [0.0, 2.0], 4.0),
            ([1.0, 1.0], [-1.0, -1.0], -math.sqrt(2)),
            ([2.0, 0.0], [0.0, 5.0], 0.0),
        ],
    )
    def test_examples(self, d, g, expected):
        assert gradient_projection(np.array(d), GlobalDirection(np.array(g))) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariant_in_global(self):
        d = np.array([0.3, -1.2, 2.0])
        g = np.array([1.0, 2.0, -0.5])
        a = gradient_projection(d, GlobalDirection(g))
        b = gradient_projection(d, GlobalDirection(1e3 * g))
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_norm(self):
        with pytest.raises(ProjectionUndefined):
            gradient_projection(np.ones(2), GlobalDirection(np.zeros(2)))

    def test_mean_of(self):
        g = GlobalDirection.mean_of([np.array([1.0, 0.0]), np.array([3.0, 4.0])])
        np.testing.assert_allclose(g.vector, [2.0, 2.0])
        assert g.norm == pytest.approx(math.sqrt(8))


class TestNormalizeGp:
    def test_uniform(self):
        np.testing.assert_allclose(normalize_gp([2.0, 2.0, 2.0, 2.0]), 0.25, atol=1e-12)

    def test_hand_example(self):
        e = math.e
        np.testing.assert_allclose(normalize_gp([0.0, 1.0]), [1 / (1 + e), e / (1 + e)], atol=1e-12)

    def test_shift_invariant_and_no_overflow(self):
        c = np.array([1000.0, 999.0, 998.0])
        out = normalize_gp(c)
        np.testing.assert_allclose(out, normalize_gp(c - 1000.0), atol=1e-12)
        assert out.sum() == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(ConfigError):
            normalize_gp([])


class TestAdjustReward:
    def test_accuracy_up(self):
        assert adjust_reward(0.5, 0.8, 0.7, 1.0, 1.0) == pytest.approx(0.5 * 2 * math.exp(0.1), abs=1e-12)

    def test_accuracy_down(self):
        assert adjust_reward(0.2, 0.5, 0.6, 0.0, 0.0) == pytest.approx(0.4 * math.exp(-0.1), abs=1e-12)

    def test_flat_accuracy_uses_loss(self):
        assert adjust_reward(0.5, 0.7, 0.7, 0.9, 1.2) == pytest.approx(0.5 * math.exp(-0.3), abs=1e-12)

    def test_epsilon_band(self):
        assert adjust_reward(0.5, 0.7005, 0.7, 1.0, 1.0, acc_eps=1e-3) == pytest.approx(0.5)

    def test_not_clipped(self):
        assert adjust_reward(0.9, 1.0, 0.5, 0, 0) > 1.0


class TestLocalTrain:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.arch = MlpArch((3, 4, 2))
        self.X = rng.standard_normal((10, 3))
        self.y = rng.integers(0, 2, 10)
        self.w = init_params(self.arch, 0)

    def test_step_count_with_short_batch(self):
        res = local_train(self.X, self.y, self.w, np.zeros_like(self.w), self.arch, SgdConfig(), 3, 4,
                          client_rng(0, 1, 0))
        assert res.steps == 3 * 3

    def test_single_full_batch_matches_manual(self):
        sgd = SgdConfig(learning_rate=0.1, weight_decay=0.0, momentum=0.5)
        m0 = np.full_like(self.w, 0.01)
        res = local_train(self.X, self.y, self.w, m0, self.arch, sgd, 1, 100, client_rng(0, 1, 0))
        _, g = loss_and_grad(self.w, self.arch, self.X, self.y)
        np.testing.assert_allclose(res.momentum, 0.5 * m0 + g, rtol=1e-12)
        np.testing.assert_allclose(res.params, self.w - 0.1 * (0.5 * m0 + g), rtol=1e-12)

    def test_deterministic_under_key(self):
        a = local_train(self.X, self.y, self.w, np.zeros_like(self.w), self.arch, SgdConfig(), 2, 3, client_rng(4, 2, 1))
        b = local_train(self.X, self.y, self.w, np.zeros_like(self.w), self.arch, SgdConfig(), 2, 3, client_rng(4, 2, 1))
        np.testing.assert_array_equal(a.params, b.params)

    def test_empty_client_skipped(self, caplog):
        res = local_train(self.X[:0], self.y[:0], self.w, np.zeros_like(self.w), self.arch, SgdConfig(), 1, 4,
                          client_rng(0, 1, 0))
        assert res.skipped and res.steps == 0
        np.testing.assert_array_equal(res.params, self.w)
        assert "no data" in caplog.text

    def test_zero_lr_keeps_params(self):
        res = local_train(self.X, self.y, self.w, np.zeros_like(self.w), self.arch,
                          SgdConfig(learning_rate=0.0), 2, 4, client_rng(0, 1, 0))
        np.testing.assert_array_equal(res.params, self.w)


def test_client_rng_streams_independent():
    a = client_rng(0, 1, 2).random(4)
    np.testing.assert_array_equal(a, client_rng(0, 1, 2).random(4))
    assert not np.array_equal(a, client_rng(0, 1, 3).random(4))
    assert not np.array_equal(a, client_rng(0, 1, 2, stream=1).random(4))
