"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy.optimize import linprog

from percentile_rmdp import TabularMdp

ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_mdp(rng, n_states=4, n_actions=2, discount=0.9, sparse=False):
    """Random MDP and a model; with ``sparse`` some successors are unsupported."""
    support = np.ones((n_states, n_actions, n_states), dtype=bool)
    if sparse:
        support = rng.random(support.shape) < 0.6
        for s in range(n_states):
            for a in range(n_actions):
                if not support[s, a].any():
                    support[s, a, rng.integers(n_states)] = True
    model = rng.random(support.shape) * support
    model /= model.sum(axis=2, keepdims=True)
    rewards = rng.normal(size=support.shape)
    initial = rng.random(n_states)
    initial /= initial.sum()
    return TabularMdp(rewards, discount, initial, support=support), model


def lp_inner(z, nominal, weights, budget, kind, sense="min"):
    """Optimize ``p @ z`` over the weighted ball intersected with the simplex by LP."""
    keep = np.isfinite(weights)
    zk, pk, wk = z[keep], nominal[keep], weights[keep]
    k = zk.size
    sign = 1.0 if sense == "min" else -1.0
    if kind == "l1":
        # variables p (k) and t (k) with t >= |p - nominal|
        c = np.concatenate([sign * zk, np.zeros(k)])
        eye = np.eye(k)
        a_ub = np.vstack([np.hstack([eye, -eye]), np.hstack([-eye, -eye]),
                          np.concatenate([np.zeros(k), wk])[None]])
        b_ub = np.concatenate([pk, -pk, [budget]])
        a_eq = np.concatenate([np.ones(k), np.zeros(k)])[None]
        bounds = [(0, None)] * (2 * k)
    else:
        c = sign * zk
        a_ub, b_ub = None, None
        a_eq = np.ones(k)[None]
        radius = budget / wk
        bounds = [(max(0.0, p - r), p + r) for p, r in zip(pk, radius)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return sign * res.fun


def random_ball(rng, max_states=6, sparse=True):
    n = int(rng.integers(1, max_states + 1))
    support = rng.random(n) < 0.7 if sparse else np.ones(n, dtype=bool)
    if not support.any():
        support[rng.integers(n)] = True
    nominal = rng.random(n) * support
    if n > 1 and rng.random() < 0.3:
        # some supported successors with zero nominal mass
        nominal[rng.random(n) < 0.3] = 0.0
        if nominal.sum() == 0:
            nominal[np.flatnonzero(support)[0]] = 1.0
    nominal /= nominal.sum()
    weights = np.where(support, rng.uniform(0.05, 2.0, n), np.inf)
    budget = float(rng.choice([0.0, rng.uniform(0, 0.5), rng.uniform(0, 3.0)]))
    z = rng.normal(size=n) * rng.choice([1.0, 10.0])
    return z, nominal, weights, budget
