import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from percentile_rmdp import InvalidModelError, TabularMdp
from percentile_rmdp.mdp import (action_values, compute_z, greedy_policy, policy_evaluate,
                                 read_mdp_csv, return_of, solve_nominal, write_mdp_csv)

from conftest import random_mdp


def lp_solve_mdp(mdp, model):
    """Optimal values from the primal LP: minimize sum v s.t. v >= r + discount P v."""
    n_states, n_actions, _ = mdp.shape
    r_sa = np.einsum("ijk,ijk->ij", model, mdp.rewards)
    rows, rhs = [], []
    for s in range(n_states):
        for a in range(n_actions):
            row = mdp.discount * model[s, a].copy()
            row[s] -= 1.0
            rows.append(row)
            rhs.append(-r_sa[s, a])
    res = linprog(np.ones(n_states), A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(None, None)] * n_states, method="highs")
    assert res.status == 0
    return res.x


class TestTabularMdp:
    def test_scalar_rewards_broadcast(self):
        mdp = TabularMdp(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5, [1.0, 0.0])
        assert mdp.shape == (2, 2, 2)
        np.testing.assert_array_equal(mdp.rewards[1, 0], [3.0, 3.0])

    @pytest.mark.parametrize("discount", [-0.1, 1.0, 1.5])
    def test_rejects_bad_discount(self, discount):
        with pytest.raises(InvalidModelError):
            TabularMdp(np.zeros((1, 1, 1)), discount, [1.0])

    def test_rejects_bad_initial(self):
        with pytest.raises(InvalidModelError):
            TabularMdp(np.zeros((2, 1, 2)), 0.9, [0.5, 0.6])

    def test_rejects_pair_without_support(self):
        support = np.ones((2, 1, 2), dtype=bool)
        support[1, 0] = False
        with pytest.raises(InvalidModelError):
            TabularMdp(np.zeros((2, 1, 2)), 0.9, [1.0, 0.0], support=support)

    def test_arrays_are_read_only(self):
        mdp = TabularMdp(np.zeros((2, 1, 2)), 0.9, [1.0, 0.0])
        with pytest.raises(ValueError):
            mdp.rewards[0, 0, 0] = 1.0

    def test_model_off_support_rejected(self, rng):
        mdp, model = random_mdp(rng, sparse=True)
        bad = model.copy()
        s, a, t = np.argwhere(~mdp.support)[0]
        bad[s, a] = 0.0
        bad[s, a, t] = 1.0
        with pytest.raises(InvalidModelError):
            policy_evaluate(mdp, bad, np.zeros(mdp.num_states, dtype=int))

    def test_non_stochastic_row_rejected(self, rng):
        mdp, model = random_mdp(rng)
        bad = model.copy()
        bad[0, 0] *= 1.01
        with pytest.raises(InvalidModelError):
            policy_evaluate(mdp, bad, np.zeros(mdp.num_states, dtype=int))


class TestPolicyEvaluate:
    def test_self_loop_geometric_series(self):
        mdp = TabularMdp(np.ones((1, 1, 1)), 0.9, [1.0])
        np.testing.assert_allclose(policy_evaluate(mdp, np.ones((1, 1, 1)), np.array([0])), [10.0])

    def test_zero_discount_is_expected_reward(self, rng):
        mdp, model = random_mdp(rng, discount=0.0)
        policy = rng.integers(mdp.num_actions, size=mdp.num_states)
        states = np.arange(mdp.num_states)
        expected = np.einsum("ij,ij->i", model[states, policy], mdp.rewards[states, policy])
        np.testing.assert_allclose(policy_evaluate(mdp, model, policy), expected, atol=1e-14)

    def test_matches_dense_solve_and_residual(self, rng):
        for _ in range(50):
            mdp, model = random_mdp(rng, n_states=4, n_actions=3, discount=rng.uniform(0, 0.99))
            policy = rng.integers(3, size=4)
            values = policy_evaluate(mdp, model, policy)
            states = np.arange(4)
            p_pi = model[states, policy]
            r_pi = np.einsum("ij,ij->i", p_pi, mdp.rewards[states, policy])
            oracle = np.linalg.inv(np.eye(4) - mdp.discount * p_pi) @ r_pi
            np.testing.assert_allclose(values, oracle, rtol=1e-10, atol=1e-10)
            residual = r_pi + mdp.discount * p_pi @ values - values
            assert np.abs(residual).max() <= 1e-10


class TestReturnOf:
    def test_point_mass_initial(self):
        mdp = TabularMdp(np.ones((1, 1, 1)), 0.9, [1.0])
        assert return_of(mdp, np.ones((1, 1, 1)), np.array([0])) == pytest.approx(10.0)

    def test_uniform_initial_averages(self):
        rewards = np.zeros((2, 1, 2))
        rewards[0, 0, 0], rewards[1, 0, 1] = 1.0, 2.0
        model = np.zeros((2, 1, 2))
        model[0, 0, 0] = model[1, 0, 1] = 1.0
        mdp = TabularMdp(rewards, 0.5, [0.5, 0.5])
        # values are [2, 4]
        assert return_of(mdp, model, np.array([0, 0])) == pytest.approx(3.0)

    def test_linear_in_initial(self, rng):
        mdp, model = random_mdp(rng)
        policy = np.zeros(mdp.num_states, dtype=int)
        values = policy_evaluate(mdp, model, policy)
        for _ in range(10):
            p0 = rng.dirichlet(np.ones(mdp.num_states))
            other = TabularMdp(mdp.rewards, mdp.discount, p0)
            assert return_of(other, model, policy) == pytest.approx(p0 @ values, abs=1e-12)

    def test_matches_monte_carlo_rollouts(self):
        rng = np.random.default_rng(7)
        mdp, model = random_mdp(rng, n_states=4, n_actions=2, discount=0.8)
        policy = np.array([0, 1, 1, 0])
        n_rollouts, horizon = 100_000, 90
        states = rng.choice(4, size=n_rollouts, p=mdp.initial)
        total = np.zeros(n_rollouts)
        disc = 1.0
        cdf = np.cumsum(model, axis=2)
        for _ in range(horizon):
            acts = policy[states]
            u = rng.random(n_rollouts)
            nxt = np.minimum((u[:, None] > cdf[states, acts]).sum(axis=1), 3)
            total += disc * mdp.rewards[states, acts, nxt]
            disc *= mdp.discount
            states = nxt
        exact = return_of(mdp, model, policy)
        stderr = total.std(ddof=1) / np.sqrt(n_rollouts)
        assert abs(total.mean() - exact) <= 3 * stderr


class TestSolveNominal:
    def test_deterministic_chain(self):
        # state 0 moves to absorbing state 1 with reward 1
        rewards = np.zeros((2, 1, 2))
        rewards[0, 0, 1] = 1.0
        model = np.zeros((2, 1, 2))
        model[0, 0, 1] = model[1, 0, 1] = 1.0
        mdp = TabularMdp(rewards, 0.9, [1.0, 0.0])
        values, policy = solve_nominal(mdp, model, tol=1e-9)
        np.testing.assert_allclose(values, [1.0, 0.0], atol=1e-9)

    def test_constant_reward_self_loops(self):
        n, c, gamma = 3, 2.5, 0.95
        model = np.broadcast_to(np.eye(n)[:, None, :], (n, 2, n)).copy()
        mdp = TabularMdp(np.full((n, 2, n), c), gamma, np.ones(n) / n)
        values, _ = solve_nominal(mdp, model, tol=1e-8)
        np.testing.assert_allclose(values, c / (1 - gamma), atol=1e-8)

    def test_matches_lp_oracle(self, rng):
        for _ in range(30):
            mdp, model = random_mdp(rng, n_states=5, n_actions=3, discount=0.9)
            tol = 1e-8
            values, policy = solve_nominal(mdp, model, tol=tol)
            oracle = lp_solve_mdp(mdp, model)
            np.testing.assert_allclose(values, oracle, atol=tol)
            q = action_values(mdp, model, oracle)
            gaps = q.max(axis=1) - q[np.arange(5), policy]
            assert np.all(gaps <= 1e-7)

    def test_dominates_fixed_policies(self, rng):
        mdp, model = random_mdp(rng, n_states=5, n_actions=3)
        tol = 1e-6
        values, _ = solve_nominal(mdp, model, tol=tol)
        for _ in range(20):
            policy = rng.integers(3, size=5)
            assert np.all(values >= policy_evaluate(mdp, model, policy) - 2 * tol)

    def test_zero_discount(self, rng):
        mdp, model = random_mdp(rng, discount=0.0)
        values, _ = solve_nominal(mdp, model)
        np.testing.assert_allclose(values, np.einsum("ijk,ijk->ij", model, mdp.rewards).max(1))

    def test_rejects_bad_tol(self, rng):
        mdp, model = random_mdp(rng)
        with pytest.raises(ValueError):
            solve_nominal(mdp, model, tol=0.0)


class TestGreedyAndZ:
    def test_single_action(self, rng):
        mdp, model = random_mdp(rng, n_actions=1)
        policy = greedy_policy(mdp, model, rng.normal(size=mdp.num_states))
        np.testing.assert_array_equal(policy, 0)

    def test_identical_actions_tie_to_lowest(self):
        mdp = TabularMdp(np.ones((2, 2, 2)), 0.9, [1.0, 0.0])
        model = np.full((2, 2, 2), 0.5)
        np.testing.assert_array_equal(greedy_policy(mdp, model, np.array([1.0, 2.0])), [0, 0])

    def test_matches_enumeration(self, rng):
        for _ in range(50):
            mdp, model = random_mdp(rng, n_states=4, n_actions=4)
            v = rng.normal(size=4)
            policy = greedy_policy(mdp, model, v)
            for s in range(4):
                q = [sum(model[s, a, t] * (mdp.rewards[s, a, t] + mdp.discount * v[t])
                         for t in range(4)) for a in range(4)]
                assert policy[s] == int(np.argmax(q))

    def test_common_shift_keeps_argmax(self, rng):
        mdp, model = random_mdp(rng, n_states=4, n_actions=3)
        v = rng.normal(size=4)
        shifted = TabularMdp(mdp.rewards + rng.normal(size=(4, 1, 1)), mdp.discount, mdp.initial)
        np.testing.assert_array_equal(greedy_policy(mdp, model, v),
                                      greedy_policy(shifted, model, v))

    def test_z_at_zero_discount_is_rewards(self, rng):
        mdp, _ = random_mdp(rng, discount=0.0)
        np.testing.assert_array_equal(compute_z(mdp, rng.normal(size=mdp.num_states)), mdp.rewards)

    def test_z_substitution(self):
        rewards = np.zeros((2, 1, 2))
        rewards[0, 0] = [1.0, 0.0]
        mdp = TabularMdp(rewards, 0.5, [1.0, 0.0])
        np.testing.assert_allclose(compute_z(mdp, np.array([2.0, 4.0]))[0, 0], [2.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(c=st.floats(-100, 100), seed=st.integers(0, 10_000))
    def test_z_shift(self, c, seed):
        mdp, _ = random_mdp(np.random.default_rng(seed))
        v = np.random.default_rng(seed + 1).normal(size=mdp.num_states)
        diff = compute_z(mdp, v + c) - compute_z(mdp, v)
        np.testing.assert_allclose(diff, mdp.discount * c, atol=1e-10)


class TestMdpCsv:
    def test_round_trip(self, rng, tmp_path):
        mdp, model = random_mdp(rng, sparse=True)
        write_mdp_csv(tmp_path / "m.csv", mdp, model)
        mdp2, model2 = read_mdp_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(model2, model)
        np.testing.assert_array_equal(mdp2.support, mdp.support)
        np.testing.assert_array_equal(mdp2.rewards[mdp.support], mdp.rewards[mdp.support])
        np.testing.assert_array_equal(mdp2.initial, mdp.initial)
        assert mdp2.discount == mdp.discount

    def test_missing_discount(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("idstatefrom,idaction,idstateto,probability,reward\n0,0,0,1.0,0.0\n")
        with pytest.raises(InvalidModelError):
            read_mdp_csv(path)
