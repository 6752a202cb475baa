import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statepref.mdp import (
    DeterministicPolicy,
    InvalidInput,
    RewardParams,
    SoftPolicy,
    TabularMdp,
    Trajectory,
    chain3,
    check_policy_normalized,
    delta,
    enumerate_trajectories,
    forward_marginals,
    hard_value_iteration,
    random_mdp,
    sample_trajectories,
    sample_trajectory,
    soft_value_iteration,
    trajectory_log_prob,
    uniform,
)

STAY, RIGHT = 0, 1

mdp_params = st.tuples(
    st.integers(0, 2**31 - 1),  # seed
    st.integers(1, 5),  # states
    st.integers(1, 3),  # actions
    st.integers(1, 4),  # features
    st.integers(0, 4),  # horizon
)


def _random_case(params):
    seed, S, A, F, H = params
    rng = np.random.default_rng(seed)
    return rng, random_mdp(rng, S, A, F), H


class TestTabularMdp:
    def test_rejects_unnormalized_rows(self):
        T = np.zeros((2, 1, 2))
        T[0, 0, 0] = 0.6
        T[1, 0, 1] = 1.0
        with pytest.raises(InvalidInput, match=r"T\[0\]\[0\]"):
            TabularMdp.from_dense(T, np.zeros((2, 1)))

    def test_rejects_negative_probability(self):
        T = np.zeros((1, 1, 2))
        T[0, 0] = (1.5, -0.5)
        with pytest.raises(InvalidInput):
            TabularMdp.from_dense(T, np.zeros((2, 1)))

    def test_rejects_ragged_features(self):
        with pytest.raises(InvalidInput):
            TabularMdp.from_successors([[0], [1]], np.zeros((3, 2)))

    def test_rejects_non_finite_features(self):
        with pytest.raises(InvalidInput):
            TabularMdp.from_successors([[0]], [[math.nan]])

    def test_json_round_trip(self):
        rng = np.random.default_rng(3)
        m = random_mdp(rng, 4, 2, 3)
        back = TabularMdp.from_json(m.to_json())
        np.testing.assert_array_equal(back.dense_transitions(), m.dense_transitions())
        np.testing.assert_array_equal(back.features, m.features)

    def test_json_load_validates(self):
        doc = chain3().to_dict(dense=True)
        doc["transitions"][0][0] = [0.5, 0.4, 0.0]
        with pytest.raises(InvalidInput):
            TabularMdp.from_dict(json.loads(json.dumps(doc)))

    def test_chain3_dynamics(self):
        m = chain3()
        assert m.successors(0, RIGHT) == [(1, 1.0)]
        assert m.successors(2, RIGHT) == [(2, 1.0)]
        assert m.successors(1, STAY) == [(1, 1.0)]


class TestRewardParams:
    def test_rejects_nan(self):
        with pytest.raises(InvalidInput):
            RewardParams([0.0, math.inf])

    def test_soft_vi_rejects_non_finite_theta(self):
        with pytest.raises(InvalidInput):
            soft_value_iteration(chain3(), [0, math.nan, 0], 2)


class TestSoftValueIteration:
    def test_zero_theta_gives_uniform_policy(self):
        rng = np.random.default_rng(0)
        m = random_mdp(rng, 5, 3, 2)
        policy, _ = soft_value_iteration(m, np.zeros(2), 4)
        np.testing.assert_allclose(policy.probs, 1 / 3, rtol=0, atol=1e-15)

    def test_single_action_is_deterministic(self):
        m = TabularMdp.from_successors([[1], [0]], [[1.0], [-3.0]])
        policy, _ = soft_value_iteration(m, [2.5], 3)
        assert np.all(policy.probs == 1.0)

    def test_chain3_hand_backup(self):
        # Q_0(1, STAY) = ln 2 and Q_0(1, RIGHT) = 1 + ln 2 at theta = e_2, H = 1
        policy, values = soft_value_iteration(chain3(), [0, 0, 1], 1)
        assert policy.probs[0, 1, RIGHT] == pytest.approx(math.e / (1 + math.e), abs=1e-12)
        assert values.q[0, 1, STAY] == pytest.approx(math.log(2), abs=1e-12)
        assert values.q[0, 1, RIGHT] == pytest.approx(1 + math.log(2), abs=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(InvalidInput):
            soft_value_iteration(chain3(), np.zeros(3), -1)
        with pytest.raises(InvalidInput):
            soft_value_iteration(chain3(), np.zeros(3), 2, temperature=0.0)

    def test_large_rewards_stay_finite(self):
        policy, values = soft_value_iteration(chain3(), [0, 0, 800.0], 5)
        assert np.all(np.isfinite(policy.probs)) and np.all(np.isfinite(values.v))
        assert check_policy_normalized(policy)

    def test_low_temperature_approaches_hard_policy(self):
        m = chain3()
        soft, _ = soft_value_iteration(m, [0, 0, 1], 3, temperature=1e-3)
        hard, _ = hard_value_iteration(m, m.features @ [0, 0, 1], 3)
        assert np.array_equal(soft.probs[:, :2].argmax(axis=2), hard.actions[:, :2])

    def test_buffer_reuse_gives_identical_values(self):
        rng = np.random.default_rng(1)
        m = random_mdp(rng, 5, 2, 3)
        _, first = soft_value_iteration(m, rng.normal(size=3), 3)
        theta = rng.normal(size=3)
        p_fresh, v_fresh = soft_value_iteration(m, theta, 3)
        p_reuse, v_reuse = soft_value_iteration(m, theta, 3, out=first)
        assert v_reuse.v is first.v
        np.testing.assert_array_equal(p_fresh.probs, p_reuse.probs)
        np.testing.assert_array_equal(v_fresh.v, v_reuse.v)

    @given(mdp_params, st.floats(0.05, 5.0))
    def test_policy_normalized_and_v_is_logsumexp(self, params, temperature):
        rng, m, H = _random_case(params)
        policy, values = soft_value_iteration(m, 3 * rng.normal(size=m.num_features), H, temperature)
        assert check_policy_normalized(policy, atol=1e-12)
        q = values.q / temperature
        lse = temperature * (q.max(axis=2) + np.log(np.exp(q - q.max(axis=2, keepdims=True)).sum(axis=2)))
        np.testing.assert_allclose(values.v, lse, rtol=0, atol=1e-9)


class TestHardValueIteration:
    def test_zero_reward_picks_action_zero(self):
        rng = np.random.default_rng(2)
        m = random_mdp(rng, 4, 3, 2)
        policy, V = hard_value_iteration(m, np.zeros(4), 3)
        assert np.all(policy.actions == 0)
        assert np.all(V == 0)

    def test_chain3_reward_at_end(self):
        m = chain3()
        # enumerate the 4 action sequences from state 0 over two transitions
        best = 0.0
        for a0, a1 in itertools.product((STAY, RIGHT), repeat=2):
            s1 = m.successors(0, a0)[0][0]
            s2 = m.successors(s1, a1)[0][0]
            best = max(best, sum(float(s == 2) for s in (0, s1, s2)))
        _, V = hard_value_iteration(m, [0, 0, 1.0], 2)
        assert V[0, 0] == best == 1.0

    def test_time_indexed_reward(self):
        m = chain3()
        reward = np.zeros((3, 3))
        reward[1, 0] = 5.0  # only staying at 0 at t=1 pays
        policy, V = hard_value_iteration(m, reward, 2)
        assert policy.actions[0, 0] == STAY
        assert V[0, 0] == 5.0

    def test_rejects_bad_reward_shape(self):
        with pytest.raises(InvalidInput):
            hard_value_iteration(chain3(), np.zeros((2, 3)), 4)

    @given(mdp_params)
    def test_optimal_value_dominates_soft_policy_returns(self, params):
        rng, m, H = _random_case(params)
        r = rng.normal(size=m.num_states)
        hard, V = hard_value_iteration(m, r, H)
        soft, _ = soft_value_iteration(m, rng.normal(size=m.num_features), H)
        for s in range(m.num_states):
            ret_soft = (forward_marginals(m, soft, delta(m.num_states, s), H) @ r).sum()
            ret_hard = (forward_marginals(m, hard, delta(m.num_states, s), H) @ r).sum()
            assert ret_hard == pytest.approx(V[0, s], abs=1e-9)
            assert ret_soft <= V[0, s] + 1e-9


class TestForwardMarginals:
    def test_self_loops_keep_delta(self):
        m = TabularMdp.from_successors([[0, 0], [1, 1], [2, 2]], np.eye(3))
        policy, _ = soft_value_iteration(m, [1.0, -1.0, 0.3], 4)
        marg = forward_marginals(m, policy, delta(3, 1), 4)
        np.testing.assert_array_equal(marg, np.tile([0.0, 1.0, 0.0], (5, 1)))

    def test_chain3_uniform_one_step(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 1)
        marg = forward_marginals(chain3(), policy, delta(3, 0), 1)
        np.testing.assert_allclose(marg[1], [0.5, 0.5, 0.0], atol=1e-15)

    def test_dimension_mismatch(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 2)
        other = TabularMdp.from_successors([[0, 1], [1, 0]], np.eye(2))
        with pytest.raises(InvalidInput):
            forward_marginals(other, policy, delta(2, 0), 2)

    def test_policy_too_short(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 1)
        with pytest.raises(InvalidInput):
            forward_marginals(chain3(), policy, delta(3, 0), 3)

    @given(mdp_params)
    def test_conservation(self, params):
        rng, m, H = _random_case(params)
        policy, _ = soft_value_iteration(m, rng.normal(size=m.num_features), H)
        p0 = rng.dirichlet(np.ones(m.num_states))
        marg = forward_marginals(m, policy, p0, H)
        np.testing.assert_allclose(marg.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all(marg >= 0)


class TestTrajectories:
    def test_single_action_log_prob_zero(self):
        m = TabularMdp.from_successors([[1], [2], [0]], np.eye(3))
        policy, _ = soft_value_iteration(m, [1, 2, 3], 3)
        tau = Trajectory((0, 1, 2, 0), (0, 0, 0, 0))
        assert trajectory_log_prob(m, policy, tau, delta(3, 0)) == 0.0

    def test_chain3_uniform_log_prob(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 1)
        tau = Trajectory((0, 1), (RIGHT, STAY))
        assert trajectory_log_prob(chain3(), policy, tau, delta(3, 0)) == pytest.approx(-2 * math.log(2), abs=1e-15)

    def test_infeasible_is_minus_infinity(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 1)
        tau = Trajectory((0, 2), (RIGHT, STAY))
        assert not tau.is_feasible(chain3())
        assert trajectory_log_prob(chain3(), policy, tau, delta(3, 0)) == -math.inf

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInput):
            Trajectory((0, 1), (0,))

    @given(mdp_params)
    def test_enumerated_likelihoods_sum_to_one(self, params):
        rng, m, H = _random_case(params)
        H = min(H, 3)
        policy, _ = soft_value_iteration(m, rng.normal(size=m.num_features), H)
        p0 = rng.dirichlet(np.ones(m.num_states))
        total = sum(math.exp(trajectory_log_prob(m, policy, tau, p0)) for tau in enumerate_trajectories(m, p0, H))
        assert total == pytest.approx(1.0, abs=1e-9)


class TestSampling:
    def test_seed_reproducible(self):
        rng = np.random.default_rng(5)
        m = random_mdp(rng, 5, 3, 2)
        policy, _ = soft_value_iteration(m, rng.normal(size=2), 6)
        a = sample_trajectory(m, policy, uniform(5), 6, seed=11)
        b = sample_trajectory(m, policy, uniform(5), 6, seed=11)
        assert a == b
        assert a.is_feasible(m)

    def test_deterministic_case_ignores_seed(self):
        m = chain3()
        policy, _ = hard_value_iteration(m, [0, 0, 1.0], 4)
        taus = {sample_trajectory(m, policy, delta(3, 0), 4, seed) for seed in range(5)}
        assert len(taus) == 1
        assert taus.pop().states == (0, 1, 2, 2, 2)

    def test_horizon_zero(self):
        policy, _ = soft_value_iteration(chain3(), np.zeros(3), 0)
        tau = sample_trajectory(chain3(), policy, delta(3, 2), 0, seed=0)
        assert tau.states == (2,) and len(tau.actions) == 1

    def test_empirical_frequencies_match_marginals(self):
        rng = np.random.default_rng(8)
        m = random_mdp(rng, 4, 2, 2)
        H = 3
        policy, _ = soft_value_iteration(m, rng.normal(size=2), H)
        n = 100_000
        states, _ = sample_trajectories(m, policy, delta(4, 0), H, n, seed=9)
        marg = forward_marginals(m, policy, delta(4, 0), H)
        for t in range(H + 1):
            freq = np.bincount(states[:, t], minlength=4) / n
            sigma = np.sqrt(marg[t] * (1 - marg[t]) / n)
            assert np.all(np.abs(freq - marg[t]) <= 3 * sigma + 1e-12)

    def test_deterministic_policy_probs(self):
        pol = DeterministicPolicy(np.array([[1, 0, 1]]), 2)
        np.testing.assert_array_equal(pol.probs[0], [[0, 1], [1, 0], [0, 1]])
        assert isinstance(soft_value_iteration(chain3(), np.zeros(3), 0)[0], SoftPolicy)
