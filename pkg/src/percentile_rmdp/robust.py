"""Robust value iteration over s,a-rectangular weighted-norm ambiguity sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidSetError, NonConvergenceError
from .mdp import (MAX_ITERATIONS, TabularMdp, _fmt, _read_header, argmax_lowest, check_policy,
                  compute_z, stopping_threshold)
from .norms import SIMPLEX_ATOL, BallSpec, NormKind, batch_worst_case


@dataclass(frozen=True, eq=False)
class AmbiguitySet:
    """Per-(s, a) weighted-norm balls sharing one norm kind.

    Parameters
    ----------
    kind : NormKind
    nominal : ndarray of shape (S, A, S)
        Ball centers.
    weights : ndarray of shape (S, A, S)
        Positive weights; ``inf`` marks successors outside the support.
    budgets : ndarray of shape (S, A)
        Ball radii; ``inf`` allows the whole supported simplex.
    """

    kind: NormKind
    nominal: np.ndarray
    weights: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind.parse(self.kind))
        nominal = np.array(self.nominal, dtype=float)
        weights = np.array(self.weights, dtype=float)
        budgets = np.array(self.budgets, dtype=float)
        if nominal.ndim != 3 or nominal.shape[0] != nominal.shape[2]:
            raise InvalidSetError(f"nominal must have shape (S, A, S), got {nominal.shape}")
        if weights.shape != nominal.shape or budgets.shape != nominal.shape[:2]:
            raise InvalidSetError("nominal, weights and budgets have inconsistent shapes")
        if np.any(nominal < 0) or np.abs(nominal.sum(axis=2) - 1.0).max() > SIMPLEX_ATOL:
            raise InvalidSetError("every nominal row must lie on the simplex")
        if np.any(np.isnan(weights)) or np.any(weights <= 0):
            raise InvalidSetError("weights must be positive or +inf")
        if np.any(np.isinf(weights) & (nominal > 0)):
            raise InvalidSetError("infinite weight on a successor with nominal mass")
        if np.any(np.isnan(budgets)) or np.any(budgets < 0):
            raise InvalidSetError("budgets must be nonnegative")
        for arr in (nominal, weights, budgets):
            arr.setflags(write=False)
        object.__setattr__(self, "nominal", nominal)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "budgets", budgets)

    @property
    def shape(self):
        return self.nominal.shape

    def ball(self, s: int, a: int) -> BallSpec:
        return BallSpec(self.kind, self.nominal[s, a], self.weights[s, a], self.budgets[s, a])

    def check_mdp(self, mdp: TabularMdp) -> None:
        if self.shape != mdp.shape:
            raise InvalidSetError(f"ambiguity set shape {self.shape} does not match MDP {mdp.shape}")
        if np.any(np.isfinite(self.weights) & ~mdp.support):
            raise InvalidSetError("finite weight on a successor outside the MDP support")

    def with_budgets(self, budgets) -> "AmbiguitySet":
        return AmbiguitySet(self.kind, self.nominal, self.weights, budgets)


@dataclass(frozen=True)
class RobustSolution:
    """Output of :func:`robust_value_iteration`.

    ``residual`` is the sup-norm fixed-point residual of ``value``.
    """

    value: np.ndarray
    policy: np.ndarray
    robust_return: float
    iterations: int
    residual: float


def robust_action_values(mdp: TabularMdp, amb: AmbiguitySet, values) -> np.ndarray:
    """Worst-case ``q[s, a]`` for every state-action pair."""
    z = compute_z(mdp, values)
    return batch_worst_case(amb.kind, z, amb.nominal, amb.weights, amb.budgets)


def robust_bellman_apply(mdp: TabularMdp, amb: AmbiguitySet, values) -> np.ndarray:
    """One application of the robust Bellman optimality operator."""
    amb.check_mdp(mdp)
    return robust_action_values(mdp, amb, values).max(axis=1)


def _iterate(backup, n_states, threshold, max_iter):
    values = np.zeros(n_states)
    gap = np.inf
    for it in range(1, max_iter + 1):
        new = backup(values)
        gap = np.abs(new - values).max()
        values = new
        if gap <= threshold:
            return values, it
    raise NonConvergenceError("robust value iteration did not converge", gap, max_iter)


def robust_value_iteration(mdp: TabularMdp, amb: AmbiguitySet, tol: float = 1e-6,
                           max_iter: int = MAX_ITERATIONS) -> RobustSolution:
    """Solve the robust MDP by value iteration started from zero.

    Iterates until the successive sup-norm change falls below
    ``tol * (1 - discount) / (2 * discount)``. The policy is greedy with
    respect to the robust action values at the final iterate.

    Raises
    ------
    NonConvergenceError
        If ``max_iter`` backups do not reach the threshold.
    """
    amb.check_mdp(mdp)
    threshold = stopping_threshold(mdp.discount, tol)
    kind, nominal, weights, budgets = amb.kind, amb.nominal, amb.weights, amb.budgets

    def backup(v):
        z = compute_z(mdp, v)
        return batch_worst_case(kind, z, nominal, weights, budgets).max(axis=1)

    values, iterations = _iterate(backup, mdp.num_states, threshold, max_iter)
    q = robust_action_values(mdp, amb, values)
    residual = float(np.abs(q.max(axis=1) - values).max())
    return RobustSolution(value=values, policy=argmax_lowest(q),
                          robust_return=float(mdp.initial @ values),
                          iterations=iterations, residual=residual)


def robust_policy_values(mdp: TabularMdp, amb: AmbiguitySet, policy, tol: float = 1e-6,
                         max_iter: int = MAX_ITERATIONS) -> np.ndarray:
    """Worst-case value function of a fixed deterministic policy."""
    amb.check_mdp(mdp)
    policy = check_policy(mdp, policy)
    threshold = stopping_threshold(mdp.discount, tol)
    states = np.arange(mdp.num_states)
    nominal = amb.nominal[states, policy]
    weights = amb.weights[states, policy]
    budgets = amb.budgets[states, policy]
    rewards = mdp.rewards[states, policy]

    def backup(v):
        z = rewards + mdp.discount * v[None, :]
        return batch_worst_case(amb.kind, z, nominal, weights, budgets)

    values, _ = _iterate(backup, mdp.num_states, threshold, max_iter)
    return values


def robust_return_of_policy(mdp: TabularMdp, amb: AmbiguitySet, policy, tol: float = 1e-6,
                            max_iter: int = MAX_ITERATIONS) -> float:
    """Worst-case return ``min_P rho(policy, P)`` over the rectangular set."""
    return float(mdp.initial @ robust_policy_values(mdp, amb, policy, tol, max_iter))


# -- CSV exchange format ------------------------------------------------------

AMBIGUITY_COLUMNS = ["idstatefrom", "idaction", "idstateto", "nominal", "weight", "budget"]


def write_ambiguity_csv(path, amb: AmbiguitySet) -> None:
    """Write one row per finite-weight (s, a, s') with the pair's budget repeated."""
    n_states, n_actions, _ = amb.shape
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# kind: {amb.kind.value}\n")
        fh.write(f"# states: {n_states}\n")
        fh.write(f"# actions: {n_actions}\n")
        writer = csv.writer(fh)
        writer.writerow(AMBIGUITY_COLUMNS)
        for s, a, t in zip(*np.nonzero(np.isfinite(amb.weights))):
            writer.writerow([s, a, t, _fmt(amb.nominal[s, a, t]), _fmt(amb.weights[s, a, t]),
                             _fmt(amb.budgets[s, a])])


def read_ambiguity_csv(path) -> AmbiguitySet:
    """Inverse of :func:`write_ambiguity_csv`."""
    meta, body = _read_header(Path(path).read_text().splitlines())
    for key in ("kind", "states", "actions"):
        if key not in meta:
            raise InvalidSetError(f"ambiguity file lacks a '# {key}:' header line")
    n_states, n_actions = int(meta["states"]), int(meta["actions"])
    shape = (n_states, n_actions, n_states)
    nominal = np.zeros(shape)
    weights = np.full(shape, np.inf)
    budgets = np.full(shape[:2], np.nan)
    for row in csv.DictReader(body):
        s, a, t = int(row["idstatefrom"]), int(row["idaction"]), int(row["idstateto"])
        nominal[s, a, t] = float(row["nominal"])
        weights[s, a, t] = float(row["weight"])
        budgets[s, a] = float(row["budget"])
    if np.any(np.isnan(budgets)):
        raise InvalidSetError("ambiguity file misses some state-action pairs")
    return AmbiguitySet(meta["kind"], nominal, weights, budgets)
