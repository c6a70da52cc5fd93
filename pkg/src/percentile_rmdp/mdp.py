"""Tabular MDPs: representation, policy evaluation and nominal solving.

Transition models are plain ``(S, A, S)`` float arrays; policies are integer
arrays of length ``S``; value functions are float arrays of length ``S``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidModelError, NonConvergenceError

STOCHASTIC_ATOL = 1e-12
MAX_ITERATIONS = 1_000_000
#: relative slack under which two action values count as tied
TIE_RTOL = 1e-10


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with rewards on transitions ``r[s, a, s']``.

    Parameters
    ----------
    rewards : array_like, shape (S, A, S) or (S, A)
        Transition rewards. Per-(s, a) rewards are broadcast over successors.
    discount : float
        Discount factor in ``[0, 1)``.
    initial : array_like, shape (S,)
        Initial state distribution.
    support : array_like of bool, shape (S, A, S), optional
        Successors that are possible under the prior. Defaults to all.
    """

    rewards: np.ndarray
    discount: float
    initial: np.ndarray
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=float)
        if rewards.ndim == 2:
            rewards = np.repeat(rewards[:, :, None], rewards.shape[0], axis=2)
        if rewards.ndim != 3 or rewards.shape[0] != rewards.shape[2]:
            raise InvalidModelError(f"rewards must have shape (S, A, S), got {rewards.shape}")
        n_states, n_actions, _ = rewards.shape
        if n_states < 1 or n_actions < 1:
            raise InvalidModelError("MDP needs at least one state and one action")
        if not np.all(np.isfinite(rewards)):
            raise InvalidModelError("rewards must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise InvalidModelError(f"discount must lie in [0, 1), got {self.discount}")
        initial = np.asarray(self.initial, dtype=float)
        if initial.shape != (n_states,):
            raise InvalidModelError(f"initial must have shape ({n_states},), got {initial.shape}")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > STOCHASTIC_ATOL:
            raise InvalidModelError("initial distribution must be nonnegative and sum to 1")
        if self.support is None:
            support = np.ones(rewards.shape, dtype=bool)
        else:
            support = np.asarray(self.support, dtype=bool)
        if support.shape != rewards.shape:
            raise InvalidModelError(f"support must have shape {rewards.shape}, got {support.shape}")
        if not np.all(support.any(axis=2)):
            raise InvalidModelError("every (s, a) needs at least one supported successor")
        object.__setattr__(self, "rewards", _frozen(rewards, float))
        object.__setattr__(self, "initial", _frozen(initial, float))
        object.__setattr__(self, "support", _frozen(support, bool))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def shape(self):
        return self.rewards.shape


def check_model(mdp: TabularMdp, model, atol: float = STOCHASTIC_ATOL) -> np.ndarray:
    """Validate a transition model against ``mdp`` and return it as an array.

    Raises
    ------
    InvalidModelError
        If a row is not a distribution or puts mass outside the support.
    """
    probs = np.asarray(model, dtype=float)
    if probs.shape != mdp.shape:
        raise InvalidModelError(f"model must have shape {mdp.shape}, got {probs.shape}")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InvalidModelError("model has negative or non-finite probabilities")
    row_err = np.abs(probs.sum(axis=2) - 1.0)
    if row_err.max() > atol:
        s, a = np.unravel_index(row_err.argmax(), row_err.shape)
        raise InvalidModelError(f"row ({s}, {a}) sums to {probs[s, a].sum()!r}, not 1")
    if np.any(probs[~mdp.support] > 0):
        raise InvalidModelError("model puts mass outside the support mask")
    return probs


def check_policy(mdp: TabularMdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.num_states,) or not np.issubdtype(policy.dtype, np.integer):
        raise ValueError(f"policy must be an integer array of shape ({mdp.num_states},)")
    if np.any(policy < 0) or np.any(policy >= mdp.num_actions):
        raise ValueError("policy refers to an action outside [0, A)")
    return policy


def expected_rewards(mdp: TabularMdp, model) -> np.ndarray:
    """Expected one-step reward for every (s, a) under ``model``."""
    return np.einsum("ijk,ijk->ij", model, mdp.rewards)


def compute_z(mdp: TabularMdp, values) -> np.ndarray:
    """Return ``z[s, a, s'] = r[s, a, s'] + discount * v[s']``."""
    values = np.asarray(values, dtype=float)
    return mdp.rewards + mdp.discount * values[None, None, :]


def action_values(mdp: TabularMdp, model, values) -> np.ndarray:
    """One-step lookahead ``q[s, a] = P(s, a)^T z(s, a)``."""
    return np.einsum("ijk,ijk->ij", model, compute_z(mdp, values))


def argmax_lowest(q) -> np.ndarray:
    """Row-wise argmax that resolves near-ties toward the lowest index.

    Values within ``TIE_RTOL`` (relative) of the row maximum count as tied so
    that summation-order noise cannot flip the chosen action.
    """
    q = np.asarray(q, dtype=float)
    best = q.max(axis=1, keepdims=True)
    slack = TIE_RTOL * np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - slack, axis=1)


def greedy_policy(mdp: TabularMdp, model, values) -> np.ndarray:
    """Greedy policy with respect to ``values``; ties go to the lowest action."""
    return argmax_lowest(action_values(mdp, model, values))


def policy_matrix(mdp: TabularMdp, model, policy):
    """Transition matrix and reward vector of a deterministic policy."""
    states = np.arange(mdp.num_states)
    p_pi = model[states, policy, :]
    r_pi = np.einsum("ij,ij->i", p_pi, mdp.rewards[states, policy, :])
    return p_pi, r_pi


def policy_evaluate(mdp: TabularMdp, model, policy) -> np.ndarray:
    """Exact value of ``policy`` under ``model`` by a direct linear solve."""
    model = check_model(mdp, model)
    policy = check_policy(mdp, policy)
    p_pi, r_pi = policy_matrix(mdp, model, policy)
    lhs = np.eye(mdp.num_states) - mdp.discount * p_pi
    values = np.linalg.solve(lhs, r_pi)
    # one refinement step keeps the fixed-point residual near machine precision
    values += np.linalg.solve(lhs, r_pi - lhs @ values)
    return values


def return_of(mdp: TabularMdp, model, policy) -> float:
    """Discounted return ``p0^T v`` of ``policy`` under ``model``."""
    return float(mdp.initial @ policy_evaluate(mdp, model, policy))


def stopping_threshold(discount: float, tol: float) -> float:
    """Successive-iterate gap that guarantees a ``tol``-optimal value."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if discount == 0.0:
        return np.inf
    return tol * (1.0 - discount) / (2.0 * discount)


def solve_nominal(mdp: TabularMdp, model, tol: float = 1e-6, max_iter: int = MAX_ITERATIONS):
    """Value iteration on the standard Bellman optimality operator.

    Returns
    -------
    values : ndarray of shape (S,)
        Within ``tol`` of the optimal value function in sup-norm.
    policy : ndarray of shape (S,)
        Greedy policy with respect to ``values``.
    """
    model = check_model(mdp, model)
    threshold = stopping_threshold(mdp.discount, tol)
    r_sa = expected_rewards(mdp, model)
    values = np.zeros(mdp.num_states)
    gap = np.inf
    for _ in range(max_iter):
        new = (r_sa + mdp.discount * model @ values).max(axis=1)
        gap = np.abs(new - values).max()
        values = new
        if gap <= threshold:
            break
    else:
        raise NonConvergenceError("value iteration did not converge", gap, max_iter)
    return values, greedy_policy(mdp, model, values)


# -- CSV exchange format ------------------------------------------------------

MDP_COLUMNS = ["idstatefrom", "idaction", "idstateto", "probability", "reward"]


def _fmt(x) -> str:
    return repr(float(x))


def write_mdp_csv(path, mdp: TabularMdp, model) -> None:
    """Write ``mdp`` and ``model`` as a long CSV with a ``#`` header block.

    Only supported transitions are written; absent rows are off-support.
    """
    model = check_model(mdp, model)
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# states: {mdp.num_states}\n")
        fh.write(f"# actions: {mdp.num_actions}\n")
        fh.write(f"# discount: {_fmt(mdp.discount)}\n")
        fh.write("# initial: " + " ".join(_fmt(x) for x in mdp.initial) + "\n")
        writer = csv.writer(fh)
        writer.writerow(MDP_COLUMNS)
        for s, a, t in zip(*np.nonzero(mdp.support)):
            writer.writerow([s, a, t, _fmt(model[s, a, t]), _fmt(mdp.rewards[s, a, t])])


def _read_header(lines):
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    return meta, body


def read_mdp_csv(path):
    """Inverse of :func:`write_mdp_csv`; returns ``(mdp, model)``."""
    meta, body = _read_header(Path(path).read_text().splitlines())
    rows = list(csv.DictReader(body))
    missing = set(MDP_COLUMNS) - set(rows[0] if rows else {})
    if missing:
        raise InvalidModelError(f"MDP file lacks columns {sorted(missing)}")
    if "discount" not in meta:
        raise InvalidModelError("MDP file lacks a '# discount:' header line")
    froms = np.array([int(r["idstatefrom"]) for r in rows])
    acts = np.array([int(r["idaction"]) for r in rows])
    tos = np.array([int(r["idstateto"]) for r in rows])
    n_states = int(meta.get("states", max(froms.max(), tos.max()) + 1))
    n_actions = int(meta.get("actions", acts.max() + 1))
    shape = (n_states, n_actions, n_states)
    model = np.zeros(shape)
    rewards = np.zeros(shape)
    support = np.zeros(shape, dtype=bool)
    for r, s, a, t in zip(rows, froms, acts, tos):
        model[s, a, t] = float(r["probability"])
        rewards[s, a, t] = float(r["reward"])
        support[s, a, t] = True
    if "initial" in meta:
        initial = np.array([float(x) for x in meta["initial"].split()])
    else:
        initial = np.full(n_states, 1.0 / n_states)
    mdp = TabularMdp(rewards, float(meta["discount"]), initial, support)
    return mdp, check_model(mdp, model)
