import itertools
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from fedsel.errors import ConfigError, SelectionLogicError, UnpulledArm
from fedsel.selection import (
    BanditStats,
    SelectionOutcome,
    alpha_at,
    gpcb_score,
    gpcb_scores,
    record_rewards,
    select_gpcb,
    select_pow_d,
    select_random,
    select_top_gp,
)


def stats_from(means, pulls, t=1, T=10, rho=1.0):
    means, pulls = np.asarray(means, float), np.asarray(pulls, np.int64)
    return BanditStats(means * pulls, pulls, int(pulls.sum()), t, T, rho)


class TestAlpha:
    @pytest.mark.parametrize("t, T, rho, expected", [(1, 10, 1.0, 0.1), (10, 10, 1.0, 1.0), (5, 20, 2.0, 0.5)])
    def test_examples(self, t, T, rho, expected):
        assert alpha_at(t, T, rho) == pytest.approx(expected, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            alpha_at(0, 10, 1.0)
        with pytest.raises(ConfigError):
            alpha_at(11, 10, 1.0)
        with pytest.raises(ConfigError):
            alpha_at(1, 0, 1.0)


class TestGpcbScore:
    def test_hand_example(self):
        s = stats_from([0.5, 0.2], [2, 8])
        assert gpcb_score(s, 0, alpha=0.5) == pytest.approx(0.5 + 0.5 * math.sqrt(2 * math.log(10) / 2), abs=1e-12)
        assert gpcb_score(s, 1, alpha=0.5) == pytest.approx(0.2 + 0.5 * math.sqrt(2 * math.log(10) / 8), abs=1e-12)

    def test_alpha_zero_is_mean(self):
        s = stats_from([0.3, 0.7, 0.1], [1, 4, 2])
        np.testing.assert_allclose(gpcb_scores(s, alpha=0.0), [0.3, 0.7, 0.1], atol=1e-12)

    def test_default_alpha_uses_schedule(self):
        s = stats_from([0.3, 0.7], [3, 3], t=4, T=8, rho=2.0)
        np.testing.assert_allclose(gpcb_scores(s), gpcb_scores(s, alpha=1.0))

    def test_unpulled(self):
        s = stats_from([0.3, 0.0], [2, 0])
        with pytest.raises(UnpulledArm):
            gpcb_score(s, 1)

    def test_single_pull_total_has_no_bonus(self):
        s = stats_from([0.4], [1])
        assert gpcb_score(s, 0, alpha=1.0) == pytest.approx(0.4)


def brute_force_topk(u, K):
    return max(itertools.combinations(range(len(u)), K), key=lambda c: sum(u[i] for i in c))


class TestSelectGpcb:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            N = int(rng.integers(2, 9))
            K = int(rng.integers(1, min(N, 4) + 1))
            s = stats_from(rng.random(N), rng.integers(1, 6, N), t=3, T=10)
            out = select_gpcb(s, K)
            u = gpcb_scores(s)
            assert sum(u[list(out.selected)]) == pytest.approx(sum(u[list(brute_force_topk(u, K))]))

    def test_ties_fewer_pulls_then_lower_id(self):
        s = stats_from([0.5, 0.5, 0.5, 0.5], [2, 2, 2, 2])
        assert select_gpcb(s, 2, alpha=0.0).selected == (0, 1)
        s = stats_from([0.5, 0.5, 0.5], [3, 1, 3])
        assert select_gpcb(s, 2, alpha=0.0).selected == (1, 0)

    def test_dominant_arm_always_chosen(self):
        s = stats_from([1.0, 0, 0, 0], [1, 1, 1, 1])
        assert 0 in select_gpcb(s, 1, alpha=0.0).selected

    def test_ineligible_never_chosen(self):
        s = stats_from([0.9, 0.1, 0.2], [1, 1, 1])
        s.eligible = np.array([False, True, True])
        assert select_gpcb(s, 2, alpha=0.0).selected == (2, 1)

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            select_gpcb(stats_from([0.1, 0.2], [1, 1]), 3)


class TestTopGp:
    def test_equal_values_lowest_ids(self):
        assert select_top_gp(np.zeros(5), 3).selected == (0, 1, 2)

    def test_k_equals_n(self):
        assert sorted(select_top_gp([0.3, 0.1, 0.2], 3).selected) == [0, 1, 2]

    def test_matches_gpcb_alpha_zero_on_first_round(self):
        c_tilde = np.array([0.1, 0.4, 0.2, 0.3])
        s = BanditStats.initial(c_tilde, horizon=5)
        assert select_top_gp(c_tilde, 2).selected == select_gpcb(s, 2, alpha=0.0).selected


class TestRandom:
    def test_distinct_and_size(self):
        out = select_random(10, 4, np.random.default_rng(0))
        assert len(set(out.selected)) == 4

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(1)
        counts = np.zeros(8)
        for _ in range(4000):
            counts[list(select_random(8, 3, rng).selected)] += 1
        assert chisquare(counts).pvalue > 1e-3

    def test_eligible_only(self):
        out = select_random(5, 2, np.random.default_rng(0), eligible=np.array([0, 1, 0, 1, 0], bool))
        assert sorted(out.selected) == [1, 3]


class TestPowD:
    def test_picks_highest_loss_among_candidates(self):
        loss = np.array([0.1, 0.9, 0.5, 0.3, 0.7, 0.2])
        out = select_pow_d(6, 4, 2, lambda i: loss[i], np.random.default_rng(0))
        cand = list(out.candidates)
        expected = sorted(cand, key=lambda i: -loss[i])[:2]
        assert list(out.selected) == expected
        assert np.all(np.isinf(out.scores[np.setdiff1d(np.arange(6), cand)]))

    def test_d_equals_k(self):
        out = select_pow_d(5, 2, 2, lambda i: 0.0, np.random.default_rng(3))
        assert sorted(out.selected) == list(out.candidates)

    def test_bad_d(self):
        with pytest.raises(ConfigError):
            select_pow_d(5, 1, 2, lambda i: 0.0, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            select_pow_d(5, 6, 2, lambda i: 0.0, np.random.default_rng(0))


class TestRecordRewards:
    def test_updates_and_clips(self):
        s = BanditStats.initial([0.2, 0.4, 0.6], horizon=3)
        out = SelectionOutcome((0, 2), np.zeros(3))
        record_rewards(s, out, {0: 1.7, 2: -0.5})
        np.testing.assert_allclose(s.reward_sum, [1.2, 0.4, 0.6])
        np.testing.assert_array_equal(s.pulls, [2, 1, 2])
        assert s.total == 5
        np.testing.assert_allclose(s.mean_rewards(), [0.6, 0.4, 0.3])

    def test_unselected_reward_rejected(self):
        s = BanditStats.initial([0.2, 0.4], horizon=3)
        with pytest.raises(SelectionLogicError):
            record_rewards(s, SelectionOutcome((0,), np.zeros(2)), {1: 0.5})

    def test_duplicate_selection_rejected(self):
        with pytest.raises(SelectionLogicError):
            SelectionOutcome((1, 1), np.zeros(2))

    def test_per_round_mean(self):
        s = BanditStats.initial([0.2, 0.4], horizon=3, mean_mode="per_round")
        record_rewards(s, SelectionOutcome((0,), np.zeros(2)), {0: 0.6})
        np.testing.assert_allclose(s.mean_rewards(), [0.4, 0.2])

    def test_initial_ineligible_has_no_pull(self):
        s = BanditStats.initial([0.5, 0.5], horizon=3, eligible=[True, False])
        np.testing.assert_array_equal(s.pulls, [1, 0])
        assert s.total == 1
