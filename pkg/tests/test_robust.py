import numpy as np
import pytest

from percentile_rmdp import (AmbiguitySet, InvalidSetError, NonConvergenceError, TabularMdp,
                             make_domain, robust_bellman_apply, robust_value_iteration,
                             solve_nominal)
from percentile_rmdp.mdp import compute_z, return_of
from percentile_rmdp.norms import batch_worst_case
from percentile_rmdp.robust import (read_ambiguity_csv, robust_policy_values,
                                    robust_return_of_policy, write_ambiguity_csv)

from conftest import lp_inner, random_mdp

KINDS = ["l1", "linf"]


def random_set(rng, mdp, model, kind, scale=0.3):
    weights = np.where(mdp.support, rng.uniform(0.2, 2.0, mdp.shape), np.inf)
    budgets = rng.uniform(0, scale, mdp.shape[:2])
    return AmbiguitySet(kind, model, weights, budgets)


def example1_set(weights, budget):
    mdp, _ = make_domain("example1")
    nominal = np.zeros(mdp.shape)
    nominal[0, 0, 1:] = [0.48, 0.48, 0.04]
    for s in range(1, 4):
        nominal[s, 0, s] = 1.0
    w = np.where(mdp.support, 1.0, np.inf)
    w[0, 0, 1:] = weights
    return mdp, AmbiguitySet("l1", nominal, w, np.full((4, 1), budget))


class TestAmbiguitySet:
    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidSetError):
            AmbiguitySet("l1", np.ones((2, 1, 2)) / 2, np.ones((2, 1, 2)), np.zeros(2))

    def test_rejects_infinite_weight_with_mass(self):
        with pytest.raises(InvalidSetError):
            AmbiguitySet("l1", np.ones((1, 1, 2)) / 2, np.array([[[1, np.inf]]]), np.zeros((1, 1)))

    def test_rejects_finite_weight_off_mdp_support(self, rng):
        mdp, model = random_mdp(rng, sparse=True)
        amb = AmbiguitySet("l1", model, np.ones(mdp.shape), np.zeros(mdp.shape[:2]))
        with pytest.raises(InvalidSetError):
            robust_value_iteration(mdp, amb)

    def test_csv_round_trip(self, rng, tmp_path):
        mdp, model = random_mdp(rng, sparse=True)
        for kind in KINDS:
            amb = random_set(rng, mdp, model, kind)
            write_ambiguity_csv(tmp_path / "a.csv", amb)
            back = read_ambiguity_csv(tmp_path / "a.csv")
            assert back.kind == amb.kind
            for name in ("nominal", "weights", "budgets"):
                np.testing.assert_array_equal(getattr(back, name), getattr(amb, name))


class TestBellman:
    def test_zero_budget_is_nominal_backup(self, rng):
        mdp, model = random_mdp(rng, sparse=True)
        for kind in KINDS:
            amb = random_set(rng, mdp, model, kind).with_budgets(np.zeros(mdp.shape[:2]))
            v = rng.normal(size=mdp.num_states)
            expected = np.einsum("ijk,ijk->ij", model, compute_z(mdp, v)).max(axis=1)
            np.testing.assert_allclose(robust_bellman_apply(mdp, amb, v), expected, atol=1e-13)

    @pytest.mark.parametrize("kind", KINDS)
    def test_single_state_self_loop(self, kind):
        mdp = TabularMdp(np.ones((1, 1, 1)), 0.9, [1.0])
        amb = AmbiguitySet(kind, np.ones((1, 1, 1)), np.ones((1, 1, 1)), np.full((1, 1), 5.0))
        assert robust_bellman_apply(mdp, amb, np.array([3.0]))[0] == pytest.approx(1 + 0.9 * 3)

    def test_matches_lp_backup(self, rng):
        for _ in range(10):
            mdp, model = random_mdp(rng, n_states=4, n_actions=2, sparse=True)
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind)
                v = rng.normal(size=4) * 3
                z = compute_z(mdp, v)
                oracle = np.array([[lp_inner(z[s, a], amb.nominal[s, a], amb.weights[s, a],
                                             amb.budgets[s, a], kind)
                                    for a in range(2)] for s in range(4)]).max(axis=1)
                np.testing.assert_allclose(robust_bellman_apply(mdp, amb, v), oracle, atol=1e-8)

    def test_contraction_and_monotonicity(self, rng):
        for _ in range(50):
            mdp, model = random_mdp(rng, n_states=5, n_actions=3, sparse=True,
                                    discount=rng.uniform(0.5, 0.99))
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind, scale=1.0)
                u = rng.normal(size=5) * 10
                v = rng.normal(size=5) * 10
                gap = np.abs(robust_bellman_apply(mdp, amb, u) - robust_bellman_apply(mdp, amb, v))
                assert gap.max() <= mdp.discount * np.abs(u - v).max() + 1e-10
                w = u + np.abs(rng.normal(size=5))
                assert np.all(robust_bellman_apply(mdp, amb, u)
                              <= robust_bellman_apply(mdp, amb, w) + 1e-12)


class TestRobustValueIteration:
    def test_zero_budget_equals_nominal(self, rng):
        for _ in range(10):
            mdp, model = random_mdp(rng, n_states=5, n_actions=3, sparse=True)
            amb = random_set(rng, mdp, model, "l1").with_budgets(np.zeros((5, 3)))
            tol = 1e-6
            sol = robust_value_iteration(mdp, amb, tol=tol)
            values, policy = solve_nominal(mdp, model, tol=tol)
            np.testing.assert_allclose(sol.value, values, atol=2 * tol)
            np.testing.assert_array_equal(sol.policy, policy)

    def test_example1_literal_sets(self):
        w = np.array([0.25, 0.25, 1.0]) / np.sqrt(1.125)
        mdp, amb = example1_set(w, 0.1)
        shift = 0.1 / (w[0] + w[2])
        expected = 0.20 - shift * 1.25
        sol = robust_value_iteration(mdp, amb, tol=1e-9)
        assert sol.robust_return == pytest.approx(expected, abs=1e-9)
        assert sol.robust_return == pytest.approx(0.0939, abs=5e-5)

    def test_example1_literal_uniform(self):
        mdp, amb = example1_set(np.full(3, 1 / np.sqrt(3)), 0.1)
        sol = robust_value_iteration(mdp, amb, tol=1e-9)
        assert sol.robust_return == pytest.approx(0.20 - 0.1 / (2 / np.sqrt(3)) * 1.25, abs=1e-9)
        assert sol.robust_return == pytest.approx(0.0917, abs=5e-5)

    def test_solution_invariants(self, rng):
        for _ in range(20):
            mdp, model = random_mdp(rng, n_states=5, n_actions=2, sparse=True)
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind)
                tol = 1e-6
                sol = robust_value_iteration(mdp, amb, tol=tol)
                assert sol.residual <= 2 * tol
                residual = np.abs(robust_bellman_apply(mdp, amb, sol.value) - sol.value).max()
                assert residual <= 2 * tol
                assert sol.robust_return == pytest.approx(mdp.initial @ sol.value, abs=1e-12)
                nominal_values, _ = solve_nominal(mdp, model, tol=tol)
                assert np.all(sol.value <= nominal_values + 2 * tol)

    def test_larger_budgets_never_help(self, rng):
        for _ in range(20):
            mdp, model = random_mdp(rng, sparse=True)
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind)
                grown = amb.with_budgets(amb.budgets + rng.uniform(0, 0.3, amb.budgets.shape))
                small = robust_value_iteration(mdp, amb, tol=1e-8).robust_return
                large = robust_value_iteration(mdp, grown, tol=1e-8).robust_return
                assert large <= small + 1e-7

    def test_iteration_cap(self, rng):
        mdp, model = random_mdp(rng, discount=0.99)
        amb = random_set(rng, mdp, model, "l1")
        with pytest.raises(NonConvergenceError) as err:
            robust_value_iteration(mdp, amb, max_iter=3)
        assert err.value.iterations == 3 and err.value.residual > 0

    def test_deterministic(self, rng):
        mdp, model = random_mdp(rng, sparse=True)
        amb = random_set(rng, mdp, model, "linf")
        a = robust_value_iteration(mdp, amb)
        b = robust_value_iteration(mdp, amb)
        np.testing.assert_array_equal(a.value, b.value)

    def test_span_bound_on_members(self, rng):
        # return under any member of the set exceeds the guarantee by at most
        # the largest span divided by (1 - discount)
        for _ in range(10):
            mdp, model = random_mdp(rng, n_states=4, sparse=True, discount=0.8)
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind)
                sol = robust_value_iteration(mdp, amb, tol=1e-9)
                z = compute_z(mdp, sol.value)
                hi = batch_worst_case(kind, z, amb.nominal, amb.weights, amb.budgets, "max")
                lo = batch_worst_case(kind, z, amb.nominal, amb.weights, amb.budgets, "min")
                bound = (hi - lo).max() / (1 - mdp.discount)
                for _ in range(20):
                    zr = rng.normal(size=mdp.shape)
                    _, p_lo = batch_worst_case(kind, zr, amb.nominal, amb.weights, amb.budgets,
                                               witness=True)
                    t = rng.random(mdp.shape[:2])[..., None]
                    member = t * p_lo + (1 - t) * amb.nominal
                    member /= member.sum(axis=2, keepdims=True)
                    gain = return_of(mdp, member, sol.policy) - sol.robust_return
                    assert gain <= bound + 1e-7


class TestPolicyRobustReturn:
    def test_zero_budget_matches_return(self, rng):
        mdp, model = random_mdp(rng, sparse=True)
        amb = random_set(rng, mdp, model, "l1").with_budgets(np.zeros(mdp.shape[:2]))
        policy = rng.integers(mdp.num_actions, size=mdp.num_states)
        assert robust_return_of_policy(mdp, amb, policy, tol=1e-9) == pytest.approx(
            return_of(mdp, model, policy), abs=1e-8)

    def test_consistent_with_optimal(self, rng):
        for _ in range(10):
            mdp, model = random_mdp(rng, sparse=True)
            for kind in KINDS:
                amb = random_set(rng, mdp, model, kind)
                sol = robust_value_iteration(mdp, amb, tol=1e-9)
                assert robust_return_of_policy(mdp, amb, sol.policy, tol=1e-9) == pytest.approx(
                    sol.robust_return, abs=1e-7)

    def test_below_nominal_return(self, rng):
        for _ in range(20):
            mdp, model = random_mdp(rng, sparse=True)
            amb = random_set(rng, mdp, model, "linf")
            policy = rng.integers(mdp.num_actions, size=mdp.num_states)
            assert robust_return_of_policy(mdp, amb, policy) <= return_of(mdp, model, policy) + 1e-6

    def test_policy_values_shape(self, rng):
        mdp, model = random_mdp(rng)
        amb = random_set(rng, mdp, model, "l1")
        values = robust_policy_values(mdp, amb, np.zeros(mdp.num_states, dtype=int))
        assert values.shape == (mdp.num_states,)
