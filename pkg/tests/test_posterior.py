import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbsirl.hypotheses import HypothesisSpace
from gbsirl.posterior import (NoiseMode, NoiseModel, Observation, Posterior, cell_predictions,
                              incorrect_mass_ratio, initial_posterior, map_hypothesis,
                              predicted_optimal_set, replay, update_action, update_reward,
                              weighted_prediction)
from helpers import brute_force_posterior


def pair_space(reward_values=None):
    """Two hypotheses on one state with two actions: h1 picks a0, h2 picks a1."""
    labels = np.array([[[1, 0]], [[0, 1]]], dtype=bool)
    return HypothesisSpace(labels, np.ones(2), reward_values)


def posterior_from(probs):
    with np.errstate(divide="ignore"):
        return Posterior(np.log(np.asarray(probs, dtype=float)))


class TestNoiseModel:
    def test_per_action_normalisation(self):
        noise = NoiseModel.per_action(0.1, num_actions=5)
        assert noise.gamma_hat[0] == pytest.approx(0.6)
        assert noise.mode is NoiseMode.PER_ACTION

    def test_aggregated_normalisation(self):
        noise = NoiseModel.aggregated(0.1)
        assert noise.gamma_hat[0] == pytest.approx(0.9)

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            NoiseModel(0.1, 0.8, NoiseMode.AGGREGATED)

    def test_rejects_beta_above_gamma(self):
        with pytest.raises(ValueError):
            NoiseModel.aggregated(0.6)

    def test_per_action_needs_action_count(self):
        with pytest.raises(ValueError):
            NoiseModel(0.1, 0.9, NoiseMode.PER_ACTION)

    def test_sigma_hat_positive(self):
        with pytest.raises(ValueError):
            NoiseModel.aggregated(0.1, sigma_hat=0.0)

    def test_per_state_values(self):
        noise = NoiseModel.aggregated([0.1, 0.2])
        assert noise.at(1) == pytest.approx((0.2, 0.8))
        assert NoiseModel.aggregated(0.1, num_states=3).beta_hat.shape == (3,)


class TestUpdateAction:
    noise = NoiseModel.per_action(0.1, num_actions=2)

    def test_single_step(self):
        post = update_action(initial_posterior(pair_space()), pair_space(), 0, 0, self.noise)
        np.testing.assert_allclose(post.probs, [0.9, 0.1], atol=1e-12)
        assert post.history == (Observation("action", 0, 0),)

    def test_equal_multipliers_leave_posterior_unchanged(self):
        space = pair_space()
        flat = NoiseModel(0.5, 0.5, NoiseMode.AGGREGATED)
        post = update_action(posterior_from([0.3, 0.7]), space, 0, 1, flat)
        np.testing.assert_allclose(post.probs, [0.3, 0.7], atol=1e-12)

    @pytest.mark.parametrize("t", [1, 5, 20, 200])
    def test_repeated_observation(self, t):
        space = pair_space()
        post = initial_posterior(space)
        for _ in range(t):
            post = update_action(post, space, 0, 0, self.noise)
        # closed form in log space to avoid 0.1**200 underflow
        expected = 1.0 / (1.0 + np.exp(t * (np.log(0.1) - np.log(0.9))))
        assert post.probs[0] == pytest.approx(expected, rel=1e-12)
        assert np.isfinite(post.log_probs).all()
        assert len(post.history) == t

    def test_long_history_stays_finite(self):
        space = pair_space()
        post = initial_posterior(space)
        for _ in range(2000):
            post = update_action(post, space, 0, 0, self.noise)
        assert np.isfinite(post.log_probs).all()
        assert post.probs.sum() == pytest.approx(1.0, abs=1e-10)


class TestUpdateReward:
    def test_softmax_example(self):
        rv = np.array([[[0.0, 0.0]], [[1.0, 1.0]]])
        space = pair_space(rv)
        noise = NoiseModel.aggregated(0.1, sigma_hat=1.0)
        post = update_reward(initial_posterior(space), space, 0, 0.0, noise)
        np.testing.assert_allclose(post.probs, [0.7310585786, 0.2689414214], atol=1e-9)

    def test_shared_reward_no_change(self):
        rv = np.full((2, 1, 2), 0.4)
        space = pair_space(rv)
        post = update_reward(posterior_from([0.2, 0.8]), space, 0, 3.0, NoiseModel.aggregated(0.1))
        np.testing.assert_allclose(post.probs, [0.2, 0.8], atol=1e-12)

    def test_midpoint_observation_keeps_uniform(self):
        rv = np.array([[[0.0, 0.0]], [[1.0, 1.0]]])
        space = pair_space(rv)
        post = update_reward(initial_posterior(space), space, 0, 0.5, NoiseModel.aggregated(0.1))
        np.testing.assert_allclose(post.probs, [0.5, 0.5], atol=1e-12)

    def test_needs_rewards(self):
        with pytest.raises(ValueError):
            update_reward(initial_posterior(pair_space()), pair_space(), 0, 0.0,
                          NoiseModel.aggregated(0.1))


@st.composite
def bayes_instances(draw):
    H = draw(st.integers(1, 12))
    S = draw(st.integers(1, 8))
    A = draw(st.integers(2, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    labels = rng.random((H, S, A)) < 0.4
    labels[~labels.any(axis=2), 0] = True
    rv = rng.uniform(-1, 1, size=(H, S, A))
    prior = rng.uniform(0.1, 1.0, size=H)
    n = draw(st.integers(0, 20))
    history = []
    for _ in range(n):
        x = int(rng.integers(S))
        if rng.random() < 0.5:
            history.append(Observation("action", x, int(rng.integers(A))))
        else:
            history.append(Observation("reward", x, float(rng.uniform(-1, 1))))
    beta = float(rng.uniform(0.05, 0.45))
    return labels, rv, prior, history, beta


class TestBruteForceEquivalence:
    @given(bayes_instances())
    def test_incremental_matches_direct(self, inst):
        labels, rv, prior, history, beta = inst
        space = HypothesisSpace(labels, prior, rv)
        noise = NoiseModel.aggregated(beta, sigma_hat=0.7)
        post = replay(space, history, noise)
        expected = brute_force_posterior(space.prior, labels, rv.mean(axis=2), history,
                                         beta, 1 - beta, 0.7)
        np.testing.assert_allclose(post.probs, expected, atol=1e-10, rtol=0)
        assert abs(post.probs.sum() - 1.0) <= 1e-10
        assert len(post.history) == len(history)

    @given(bayes_instances(), st.randoms(use_true_random=False))
    def test_order_independent(self, inst, rnd):
        labels, rv, prior, history, beta = inst
        space = HypothesisSpace(labels, prior, rv)
        noise = NoiseModel.aggregated(beta, sigma_hat=0.7)
        shuffled = list(history)
        rnd.shuffle(shuffled)
        a = replay(space, history, noise).log_probs
        b = replay(space, shuffled, noise).log_probs
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


class TestPredictions:
    def test_point_mass(self):
        space = pair_space()
        W, a = weighted_prediction(posterior_from([0.0, 1.0]), space, 0)
        assert (W, a) == (1.0, 1)

    def test_even_split_ties_to_action_zero(self):
        W, a = weighted_prediction(initial_posterior(pair_space()), pair_space(), 0)
        assert W == pytest.approx(0.0, abs=1e-15)
        assert a == 0

    def test_weighted_sum(self):
        W, a = weighted_prediction(posterior_from([0.7, 0.3]), pair_space(), 0)
        assert W == pytest.approx(0.4)
        assert a == 0

    @given(bayes_instances())
    def test_vectorised_matches_scalar(self, inst):
        labels, rv, prior, _, _ = inst
        space = HypothesisSpace(labels, prior, rv)
        post = initial_posterior(space)
        W, a_star = cell_predictions(post, space)
        for i in range(space.num_cells):
            w, a = weighted_prediction(post, space, i)
            assert W[i] == pytest.approx(w, abs=1e-12)
            assert a_star[i] == a
        assert np.all((W >= -1 - 1e-12) & (W <= 1 + 1e-12))

    def test_map(self):
        assert map_hypothesis(posterior_from([0.25] * 4)) == 0
        assert map_hypothesis(posterior_from(np.eye(10)[7])) == 7
        assert map_hypothesis(posterior_from([0.3, 0.7])) == 1

    def test_predicted_optimal_set(self):
        labels = np.array([[[1, 1, 0]], [[0, 0, 1]]], dtype=bool)
        space = HypothesisSpace(labels, np.ones(2))
        assert predicted_optimal_set(posterior_from([1.0, 0.0]), space, 0, 0.9) == {0, 1}
        space2 = pair_space()
        assert predicted_optimal_set(initial_posterior(space2), space2, 0, 0.5) == set()
        assert predicted_optimal_set(posterior_from([0.8, 0.2]), space2, 0, 0.5) == {0}
        with pytest.raises(ValueError):
            predicted_optimal_set(initial_posterior(space2), space2, 0, 1.0)


class TestIncorrectMassRatio:
    @pytest.mark.parametrize("p, expected", [(0.5, 1.0), (1.0, 0.0), (0.2, 4.0)])
    def test_examples(self, p, expected):
        post = posterior_from([p, 1 - p])
        assert incorrect_mass_ratio(post, 0) == pytest.approx(expected)

    def test_zero_mass_is_infinite(self):
        assert incorrect_mass_ratio(posterior_from([0.0, 1.0]), 0) == float("inf")


class TestSnapshot:
    def test_json_round_trip(self):
        space = pair_space()
        noise = NoiseModel.per_action(0.1, 2)
        post = update_action(initial_posterior(space), space, 0, 1, noise)
        back = Posterior.from_json(post.to_json())
        np.testing.assert_allclose(back.probs, post.probs, atol=1e-15)
        assert back.history == post.history

    def test_version_checked(self):
        with pytest.raises(ValueError):
            Posterior.from_json('{"version": 99, "probabilities": {}, "history": []}')
