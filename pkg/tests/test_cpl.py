import math

import numpy as np
import pytest

from fedhire.core import ClusterletState, DataMatrix, FeatureClusterMatrix
from fedhire.cpl import (
    CplConfig,
    compute_gamma,
    competition_similarities,
    eliminate_clusterlets,
    penalize_rival,
    reward_winner,
    run_cpl,
    select_winner_and_rival,
    squash_weight,
)


def make_state(centroids, raw=None, wins=None, active=None):
    centroids = np.asarray(centroids, dtype=np.float64)
    state = ClusterletState.initial(centroids)
    if raw is not None:
        state.raw_weights = np.asarray(raw, dtype=np.float64)
        state.weights = squash_weight(state.raw_weights)
    if wins is not None:
        state.win_counts = np.asarray(wins, dtype=np.int64)
    if active is not None:
        state.active = np.asarray(active, dtype=bool)
    return state


class TestSquashWeight:
    def test_midpoint(self):
        assert squash_weight(-5.0) == 0.5

    def test_at_zero(self):
        assert abs(squash_weight(0.0) - 1.0) < 1e-15

    def test_deep_negative(self):
        # direct evaluation of 1 / (1 + e^{20})
        assert squash_weight(-7.0) == pytest.approx(1 / (1 + math.exp(20)), rel=1e-12)

    def test_monotone_in_raw_weight(self):
        # strictly increasing through the responsive range; the tails
        # saturate to exactly 0/1 in float64, so only non-decrease holds there
        raws = np.linspace(-7.5, -2.5, 60)
        ws = squash_weight(raws)
        assert (np.diff(ws) > 0).all()
        assert (np.diff(squash_weight(np.linspace(-20, 20, 200))) >= 0).all()


class TestComputeGamma:
    def test_symmetric(self):
        np.testing.assert_allclose(compute_gamma(np.array([1, 1])), [0.5, 0.5])

    def test_unbalanced(self):
        np.testing.assert_allclose(compute_gamma(np.array([3, 1])), [0.25, 0.75])

    def test_zero_total_convention(self):
        np.testing.assert_array_equal(compute_gamma(np.zeros(3, np.int64)), 1.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            compute_gamma(np.array([-1, 2]))

    def test_discounts_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = rng.integers(0, 50, size=8)
            if g.sum() == 0:
                continue
            gamma = compute_gamma(g)
            assert ((gamma >= 0) & (gamma <= 1)).all()
            # only clusterlets that never won keep full possibility
            assert (gamma[g > 0] < 1).all()
            assert (1 - gamma).sum() == pytest.approx(1.0, abs=1e-12)


class TestSelectWinnerAndRival:
    def test_object_at_centroid_wins(self):
        state = make_state([[0.5, 0.5], [0.9, 0.9]])
        m = FeatureClusterMatrix.uniform(2, 2)
        v, r = select_winner_and_rival(np.array([0.5, 0.5]), state, m)
        assert (v, r) == (0, 1)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            k, d = 6, 3
            state = make_state(
                rng.normal(size=(k, d)),
                raw=rng.uniform(-6, 1, size=k),
                wins=rng.integers(0, 10, size=k),
            )
            m = FeatureClusterMatrix(np.full((k, d), 1.0 / d))
            x = rng.normal(size=d)
            sims = competition_similarities(x, state.centroids, m.entries)
            scores = compute_gamma(state.win_counts) * state.weights * sims
            order = np.argsort(-scores, kind="stable")
            v, r = select_winner_and_rival(x, state, m)
            assert v == order[0] and r == order[1]

    def test_specific_score_triple(self):
        # weights chosen so the scores come out (0.2, 0.5, 0.4): the 0.5
        # clusterlet wins and the 0.4 one is the rival
        sim = np.exp(-0.09)  # equal distances 0.3 to all three centroids
        target = np.array([0.2, 0.5, 0.4]) / sim
        raw = np.log(target / (1 - target)) / 10.0 - 5.0
        state = make_state([[0.3], [0.3], [0.3]], raw=raw)
        m = FeatureClusterMatrix.uniform(3, 1)
        v, r = select_winner_and_rival(np.array([0.0]), state, m)
        assert (v, r) == (1, 2)

    def test_exact_tie_breaks_to_lowest_index(self):
        state = make_state([[0.2, 0.2], [0.9, 0.9], [0.2, 0.2]])
        m = FeatureClusterMatrix.uniform(3, 2)
        v, r = select_winner_and_rival(np.array([0.2, 0.2]), state, m)
        assert v == 0 and r == 2

    def test_requires_two_active(self):
        state = make_state([[0.0], [1.0]], active=[True, False])
        with pytest.raises(RuntimeError):
            select_winner_and_rival(np.array([0.0]), state, FeatureClusterMatrix.uniform(2, 1))

    def test_inactive_never_selected(self):
        state = make_state(
            [[0.5, 0.5], [0.5, 0.5], [0.9, 0.9]], active=[False, True, True]
        )
        v, r = select_winner_and_rival(
            np.array([0.5, 0.5]), state, FeatureClusterMatrix.uniform(3, 2)
        )
        assert v == 1 and r == 2


class TestRewardWinner:
    def test_raw_weight_step(self):
        state = make_state([[0.0], [1.0]])
        reward_winner(state, 0, eta=0.05)
        assert state.raw_weights[0] == 0.05

    def test_win_count_increment(self):
        state = make_state([[0.0], [1.0]], wins=[7, 0])
        reward_winner(state, 0, eta=0.05)
        assert state.win_counts[0] == 8

    def test_weight_recomputed(self):
        state = make_state([[0.0], [1.0]], raw=[-5.0, 0.0])
        reward_winner(state, 0, eta=0.05)
        assert state.weights[0] == pytest.approx(1 / (1 + math.exp(-0.5)), abs=1e-5)
        assert state.weights[0] == pytest.approx(0.62246, abs=1e-5)

    def test_inactive_rejected(self):
        state = make_state([[0.0], [1.0]], active=[False, True])
        with pytest.raises(RuntimeError):
            reward_winner(state, 0, eta=0.05)


class TestPenalizeRival:
    def test_equal_similarity_full_step(self):
        state = make_state([[0.3, 0.3], [0.3, 0.3]])
        x = np.array([0.1, 0.2])
        penalize_rival(state, 0, 1, x, FeatureClusterMatrix.uniform(2, 2), eta=0.05)
        assert state.raw_weights[1] == pytest.approx(-0.05, abs=1e-15)

    def test_half_similarity_ratio(self):
        # distances engineered so sim_r / sim_v = exp(-ln 2) = 1/2
        dv = 0.3
        dr = math.sqrt(dv**2 + math.log(2.0))
        state = make_state([[dv], [dr]])
        m = FeatureClusterMatrix.uniform(2, 1)
        penalize_rival(state, 0, 1, np.array([0.0]), m, eta=0.05)
        assert state.raw_weights[1] == pytest.approx(-0.025, abs=1e-12)

    def test_far_rival_barely_touched(self):
        state = make_state([[0.0, 0.0], [50.0, 50.0]])
        penalize_rival(
            state, 0, 1, np.zeros(2), FeatureClusterMatrix.uniform(2, 2), eta=0.05
        )
        assert -1e-12 < state.raw_weights[1] <= 0.0

    def test_same_index_rejected(self):
        state = make_state([[0.0], [1.0]])
        with pytest.raises(RuntimeError):
            penalize_rival(state, 1, 1, np.array([0.0]),
                           FeatureClusterMatrix.uniform(2, 1), eta=0.05)


class TestPresentationBookkeeping:
    def test_one_presentation_updates_one_g_and_two_raw_weights(self):
        rng = np.random.default_rng(2)
        state = make_state(rng.normal(size=(5, 2)))
        m = FeatureClusterMatrix.uniform(5, 2)
        x = rng.normal(size=2)
        g_before = state.win_counts.copy()
        raw_before = state.raw_weights.copy()
        v, r = select_winner_and_rival(x, state, m)
        reward_winner(state, v, eta=0.05)
        penalize_rival(state, v, r, x, m, eta=0.05)
        assert (state.win_counts - g_before).sum() == 1
        changed = np.flatnonzero(state.raw_weights != raw_before)
        np.testing.assert_array_equal(np.sort(changed), np.sort([v, r]))
        assert state.raw_weights[v] - raw_before[v] == pytest.approx(0.05)
        # fresh uniform state: the winner is the most similar clusterlet,
        # so the rival's step never exceeds eta
        assert 0 < raw_before[r] - state.raw_weights[r] <= 0.05 + 1e-15


class TestEliminateClusterlets:
    def test_floor_retains_two(self):
        state = make_state([[0.0], [1.0]], raw=[0.0, -8.0])
        state, flagged = eliminate_clusterlets(state, threshold=1e-3)
        assert flagged
        np.testing.assert_array_equal(state.active, [True, True])

    def test_third_eliminated(self):
        state = make_state([[0.0], [1.0], [2.0]], raw=[0.0, -0.5, -8.0])
        state, flagged = eliminate_clusterlets(state, threshold=1e-3)
        assert flagged
        np.testing.assert_array_equal(state.active, [True, True, False])

    def test_no_change_when_all_above(self):
        state = make_state([[0.0], [1.0]], raw=[0.0, -0.5])
        state, flagged = eliminate_clusterlets(state, threshold=1e-3)
        assert not flagged
        assert state.active.all()

    def test_floor_keeps_two_highest_weights(self):
        state = make_state([[0.0], [1.0], [2.0]], raw=[-8.0, -7.5, -7.9])
        state, flagged = eliminate_clusterlets(state, threshold=1e-3)
        assert flagged
        np.testing.assert_array_equal(state.active, [False, True, True])


class TestCplConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"eta": 0.0, "k0": 5},
            {"eta": 0.05, "k0": 1},
            {"eta": 0.05, "k0": 5, "max_epochs": 0},
            {"eta": 0.05, "k0": 5, "elimination_threshold": 0.6},
            {"eta": 0.05, "k0": 5, "elimination_threshold": 0.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            CplConfig(**kwargs)


class TestRunCpl:
    def test_two_point_masses_recovered_exactly(self):
        # oracle: any exact 2-means separates the masses perfectly
        values = np.vstack([np.zeros((100, 2)), np.full((100, 2), 10.0)])
        result = run_cpl(DataMatrix(values), CplConfig(eta=0.05, k0=20, rng_seed=7))
        assert result.converged_k == 2
        first = result.affiliation.assignments[:100]
        second = result.affiliation.assignments[100:]
        assert len(set(first)) == 1 and len(set(second)) == 1
        assert first[0] != second[0]

    def test_extreme_separation_stays_finite(self):
        # distances large enough to underflow exp(-D); the similarity floor
        # keeps weight updates finite and the masses still separate
        values = np.vstack([np.zeros((20, 2)), np.full((20, 2), 50.0)])
        result = run_cpl(DataMatrix(values), CplConfig(eta=0.05, k0=10, rng_seed=1))
        assert np.isfinite(result.clusterlets.raw_weights).all()
        assert result.converged_k == 2
        assert len(set(result.affiliation.assignments[:20])) == 1

    def test_identical_objects_collapse_to_one(self):
        values = np.full((50, 2), 0.3)
        result = run_cpl(DataMatrix(values), CplConfig(eta=0.05, k0=20, rng_seed=7))
        assert result.converged_k == 1

    def test_deterministic_rerun(self, four_blob_data):
        config = CplConfig(eta=0.05, k0=50, rng_seed=5)
        r1 = run_cpl(four_blob_data, config)
        r2 = run_cpl(four_blob_data, config)
        np.testing.assert_array_equal(
            r1.affiliation.assignments, r2.affiliation.assignments
        )
        np.testing.assert_array_equal(r1.clusterlets.centroids, r2.clusterlets.centroids)
        np.testing.assert_array_equal(r1.clusterlets.raw_weights, r2.clusterlets.raw_weights)
        assert r1.epochs_used == r2.epochs_used

    def test_k0_exceeding_n_rejected(self):
        with pytest.raises(ValueError):
            run_cpl(DataMatrix(np.zeros((5, 2))), CplConfig(eta=0.05, k0=6))

    def test_result_is_compacted(self, four_blob_data):
        result = run_cpl(four_blob_data, CplConfig(eta=0.05, k0=60, rng_seed=1))
        assert result.converged_k == result.clusterlets.k
        assert result.converged_k <= 60
        seen = np.unique(result.affiliation.assignments)
        np.testing.assert_array_equal(seen, np.arange(result.converged_k))
        assert result.clusterlets.active.all()

    def test_separable_blobs_centroids_near_means(self):
        rng = np.random.default_rng(3)
        a = rng.normal([0.2, 0.2], 0.02, size=(50, 2))
        b = rng.normal([0.8, 0.8], 0.02, size=(50, 2))
        data = DataMatrix(np.vstack([a, b]))
        result = run_cpl(data, CplConfig(eta=0.05, k0=25, rng_seed=0))
        assert result.converged_k == 2
        found = result.clusterlets.centroids
        for mean in (a.mean(axis=0), b.mean(axis=0)):
            assert np.linalg.norm(found - mean, axis=1).min() < 0.1

    def test_weights_always_match_squashed_raw_weights(self, four_blob_data):
        result = run_cpl(four_blob_data, CplConfig(eta=0.05, k0=40, rng_seed=2))
        np.testing.assert_array_equal(
            result.clusterlets.weights,
            squash_weight(result.clusterlets.raw_weights),
        )

    def test_weighting_off_keeps_uniform_feature_rows(self):
        values = np.random.default_rng(0).normal(size=(30, 3))
        result = run_cpl(
            DataMatrix(values), CplConfig(eta=0.05, k0=10, rng_seed=4), weighting=False
        )
        np.testing.assert_allclose(result.feature_weights.entries, 1.0 / 3)
