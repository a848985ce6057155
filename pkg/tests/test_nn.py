import math

import numpy as np
import pytest

from fedsel.errors import ConfigError
from fedsel.nn import MlpArch, SgdConfig, evaluate, init_params, logits, loss_and_grad


def central_diff(f, w, h=1e-6):
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


class TestArch:
    def test_param_count(self):
        assert MlpArch((4, 3, 2)).param_count == 4 * 3 + 3 + 3 * 2 + 2

    def test_unpack_views(self):
        arch = MlpArch((2, 3, 2))
        w = np.zeros(arch.param_count)
        (W1, b1), (W2, b2) = arch.unpack(w)
        W1[0, 0] = 7.0
        assert w[0] == 7.0
        assert W1.shape == (2, 3) and b2.shape == (2,)

    def test_bad_vector_length(self):
        with pytest.raises(ConfigError):
            MlpArch((2, 2)).unpack(np.zeros(3))

    @pytest.mark.parametrize("sizes", [(3,), (3, 0, 2)])
    def test_bad_sizes(self, sizes):
        with pytest.raises(ConfigError):
            MlpArch(sizes)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            MlpArch((2, 2), "gelu")


class TestSgdConfig:
    def test_defaults(self):
        c = SgdConfig()
        assert (c.learning_rate, c.weight_decay, c.momentum) == (0.005, 1e-4, 0.1)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1])
    def test_momentum_range(self, gamma):
        with pytest.raises(ConfigError, match="momentum"):
            SgdConfig(momentum=gamma)

    def test_negative_lr(self):
        with pytest.raises(ConfigError):
            SgdConfig(learning_rate=-1e-3)


class TestLossAndGrad:
    def test_zero_weights_loss_is_log_classes(self):
        # all logits equal -> uniform softmax
        arch = MlpArch((3, 2))
        X = np.random.default_rng(0).standard_normal((5, 3))
        loss, _ = loss_and_grad(np.zeros(arch.param_count), arch, X, np.array([0, 1, 0, 1, 1]))
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(3)
        arch = MlpArch((4, 5, 3), activation)
        w = init_params(arch, 1)
        X = rng.standard_normal((6, 4))
        y = rng.integers(0, 3, 6)
        _, g = loss_and_grad(w, arch, X, y, weight_decay=0.01)
        fd = central_diff(lambda v: loss_and_grad(v, arch, X, y, 0.01)[0], w)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_weight_decay_term(self):
        arch = MlpArch((2, 2))
        w = init_params(arch, 0)
        X, y = np.ones((1, 2)), np.array([1])
        l0, g0 = loss_and_grad(w, arch, X, y)
        l1, g1 = loss_and_grad(w, arch, X, y, weight_decay=0.5)
        assert l1 - l0 == pytest.approx(0.25 * w @ w)
        np.testing.assert_allclose(g1 - g0, 0.5 * w)

    def test_duplicated_batch_same_gradient(self):
        rng = np.random.default_rng(1)
        arch = MlpArch((3, 4, 2))
        w = init_params(arch, 2)
        X, y = rng.standard_normal((4, 3)), np.array([0, 1, 1, 0])
        l1, g1 = loss_and_grad(w, arch, X, y)
        l2, g2 = loss_and_grad(w, arch, np.vstack([X, X]), np.concatenate([y, y]))
        assert l1 == pytest.approx(l2, rel=1e-12)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)

    def test_extreme_logits_finite(self):
        arch = MlpArch((1, 2))
        w = np.array([1e4, -1e4, 0.0, 0.0])
        loss, g = loss_and_grad(w, arch, np.array([[1.0]]), np.array([1]))
        assert np.isfinite(loss) and np.all(np.isfinite(g))
        assert loss == pytest.approx(2e4)

    def test_dimension_mismatch(self):
        arch = MlpArch((3, 2))
        with pytest.raises(ConfigError):
            loss_and_grad(np.zeros(arch.param_count), arch, np.zeros((2, 4)), np.zeros(2, int))

    def test_empty_batch(self):
        arch = MlpArch((3, 2))
        with pytest.raises(ConfigError, match="empty"):
            loss_and_grad(np.zeros(arch.param_count), arch, np.zeros((0, 3)), np.zeros(0, int))


class TestEvaluate:
    def test_ties_go_to_lowest_class(self):
        arch = MlpArch((2, 3))
        acc, loss = evaluate(np.zeros(arch.param_count), arch, np.ones((3, 2)), np.array([0, 1, 2]))
        assert acc == pytest.approx(1 / 3)
        assert loss == pytest.approx(math.log(3))

    def test_logits_shape_and_init_determinism(self):
        arch = MlpArch((4, 8, 3))
        np.testing.assert_array_equal(init_params(arch, 5), init_params(arch, 5))
        assert logits(init_params(arch, 5), arch, np.zeros((7, 4))).shape == (7, 3)

    def test_init_biases_zero_weights_bounded(self):
        arch = MlpArch((10, 6))
        (W, b), = arch.unpack(init_params(arch, 0))
        assert np.all(b == 0)
        assert np.abs(W).max() <= math.sqrt(6 / 16)
