import importlib

import numpy as np
import pytest

from fedsel import _kernels
from fedsel._kernels import _pykernels

try:
    from fedsel._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_reported():
    assert _kernels.BACKEND in ("cython", "python")


def test_pure_python_override(monkeypatch):
    monkeypatch.setenv("FEDSEL_PURE_PYTHON", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("FEDSEL_PURE_PYTHON")
        importlib.reload(_kernels)


@needs_ext
class TestEquivalence:
    def test_pg_least_norm(self):
        rng = np.random.default_rng(0)
        Q = np.ascontiguousarray(rng.dirichlet(np.full(6, 0.5), size=15).T)
        d = Q @ rng.uniform(1, 30, 15)
        step = 1.0 / (2 * (np.linalg.norm(Q, 2) ** 2 + 1e-6))
        xc, ic = _ckernels.pg_least_norm(Q, d, 1e-6, step, 5000, 1e-10)
        xp, ip = _pykernels.pg_least_norm(Q, d, 1e-6, step, 5000, 1e-10)
        assert ic == ip
        np.testing.assert_allclose(xc, xp, rtol=1e-9, atol=1e-10)

    @pytest.mark.parametrize("K, linear", [(1, True), (3, True), (2, False)])
    def test_gpcb_runs_bit_identical(self, K, linear):
        rng = np.random.default_rng(K)
        means = np.linspace(0.1, 0.9, 7)
        rewards = np.ascontiguousarray(np.clip(means + 0.1 * rng.standard_normal((4, 151, 7)), 0, 1))
        c = _ckernels.gpcb_runs(means, rewards, K, 1.0, linear)
        p = _pykernels.gpcb_runs(means, rewards, K, 1.0, linear)
        for a, b in zip(c, p):
            np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_gpcb_tie_rule(self):
        # all rewards equal: order is fewer pulls, then lower id -> round robin
        means = np.full(4, 0.5)
        rewards = np.full((1, 7, 4), 0.5)  # init pull + 6 rounds
        for mod in (_ckernels, _pykernels):
            _, _, _, pulls = mod.gpcb_runs(means, rewards, 1, 1.0, True)
            np.testing.assert_array_equal(np.asarray(pulls)[0], [3, 3, 2, 2])
