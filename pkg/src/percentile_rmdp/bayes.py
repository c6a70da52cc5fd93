"""Transition datasets, Dirichlet posteriors and Monte-Carlo guarantee checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .exceptions import InvalidModelError, SupportViolationError
from .mdp import TabularMdp, check_policy, solve_nominal
from .norms import FEASIBILITY_SLACK, batch_norms

#: bit generator used for every draw; recorded next to persisted results
RNG_ALGORITHM = "numpy.random.PCG64 (default_rng), Dirichlet via normalized standard_gamma"
GUARANTEE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Observed ``(s, a, s')`` triples of a tabular MDP."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        arrays = [np.asarray(x, dtype=np.int64).reshape(-1)
                  for x in (self.states, self.actions, self.next_states)]
        if not arrays[0].shape == arrays[1].shape == arrays[2].shape:
            raise ValueError("states, actions and next_states must have equal length")
        for arr, hi, name in zip(arrays, (self.num_states, self.num_actions, self.num_states),
                                 ("state", "action", "next state")):
            if arr.size and (arr.min() < 0 or arr.max() >= hi):
                raise ValueError(f"{name} index out of range [0, {hi})")
        for name, arr in zip(("states", "actions", "next_states"), arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_triples(cls, triples, num_states: int, num_actions: int) -> "TransitionDataset":
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return cls(triples[:, 0], triples[:, 1], triples[:, 2], num_states, num_actions)

    def __len__(self) -> int:
        return self.states.size

    @property
    def triples(self) -> np.ndarray:
        return np.column_stack([self.states, self.actions, self.next_states])

    @property
    def counts(self) -> np.ndarray:
        """Tally ``n[s, a, s']`` of the triples."""
        out = np.zeros((self.num_states, self.num_actions, self.num_states), dtype=np.int64)
        np.add.at(out, (self.states, self.actions, self.next_states), 1)
        return out

    def concat(self, other: "TransitionDataset") -> "TransitionDataset":
        if (self.num_states, self.num_actions) != (other.num_states, other.num_actions):
            raise ValueError("datasets belong to MDPs of different sizes")
        return TransitionDataset.from_triples(np.vstack([self.triples, other.triples]),
                                              self.num_states, self.num_actions)

    def split(self):
        """Alternate triples into two halves (even and odd positions)."""
        t = self.triples
        return (TransitionDataset.from_triples(t[0::2], self.num_states, self.num_actions),
                TransitionDataset.from_triples(t[1::2], self.num_states, self.num_actions))


@dataclass(frozen=True, eq=False)
class DirichletPosterior:
    """Independent Dirichlet distributions, one per state-action pair.

    ``alpha`` has shape (S, A, S); zero entries are outside the support.
    """

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim != 3 or alpha.shape[0] != alpha.shape[2]:
            raise InvalidModelError(f"alpha must have shape (S, A, S), got {alpha.shape}")
        if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
            raise InvalidModelError("concentrations must be finite and nonnegative")
        if not np.all((alpha > 0).any(axis=2)):
            raise InvalidModelError("every (s, a) needs a positive concentration")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def support(self) -> np.ndarray:
        return self.alpha > 0

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum(axis=2, keepdims=True)


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """``n`` transition models stacked as an array of shape (n, S, A, S)."""

    models: np.ndarray
    seed: object = None
    algorithm: str = field(default=RNG_ALGORITHM)

    def __post_init__(self):
        models = np.asarray(self.models, dtype=float)
        if models.ndim != 4 or models.shape[1] != models.shape[3] or models.shape[0] < 1:
            raise InvalidModelError(f"samples must have shape (n, S, A, S), got {models.shape}")
        if np.any(models < 0) or np.abs(models.sum(axis=3) - 1.0).max() > 1e-12:
            raise InvalidModelError("every sampled row must be a distribution")
        object.__setattr__(self, "models", models)

    def __len__(self) -> int:
        return self.models.shape[0]

    def mean(self) -> np.ndarray:
        return self.models.mean(axis=0)


def uniform_prior(mdp: TabularMdp, concentration: float = 1.0) -> DirichletPosterior:
    """Dirichlet prior with equal concentration on every supported successor."""
    return DirichletPosterior(np.where(mdp.support, float(concentration), 0.0))


def dirichlet_posterior(dataset: TransitionDataset, prior: DirichletPosterior) -> DirichletPosterior:
    """Conjugate update ``alpha + counts``.

    Raises
    ------
    SupportViolationError
        If a transition was observed outside the prior support.
    """
    counts = dataset.counts
    if counts.shape != prior.alpha.shape:
        raise ValueError(f"dataset shape {counts.shape} does not match prior {prior.alpha.shape}")
    if np.any((counts > 0) & ~prior.support):
        raise SupportViolationError("observed transition outside the prior support")
    return DirichletPosterior(prior.alpha + counts)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _dirichlet_rows(rng, alpha, n):
    support = alpha > 0
    draws = rng.standard_gamma(np.where(support, alpha, 1.0), size=(n,) + alpha.shape)
    draws *= support
    totals = draws.sum(axis=-1, keepdims=True)
    # gamma draws can underflow for tiny concentrations; fall back to the mode
    empty = totals[..., 0] == 0
    if np.any(empty):
        draws[empty] = np.broadcast_to(alpha == alpha.max(axis=-1, keepdims=True),
                                       draws.shape)[empty]
        totals = draws.sum(axis=-1, keepdims=True)
    return draws / totals


def sample_posterior(posterior: DirichletPosterior, n: int, seed=None) -> PosteriorSamples:
    """Draw ``n`` independent transition models from ``posterior``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    models = _dirichlet_rows(_rng(seed), posterior.alpha, int(n))
    return PosteriorSamples(models, seed=seed)


def iter_posterior_chunks(posterior: DirichletPosterior, n: int, seed=None,
                          chunk: int = 100) -> Iterator[PosteriorSamples]:
    """Yield ``n`` posterior draws in chunks to bound memory on large MDPs."""
    rng = _rng(seed)
    done = 0
    while done < n:
        size = min(chunk, n - done)
        yield PosteriorSamples(_dirichlet_rows(rng, posterior.alpha, size), seed=seed)
        done += size


def policy_returns(mdp: TabularMdp, models, policy) -> np.ndarray:
    """Return of ``policy`` under each model in a stack of shape (n, S, A, S)."""
    policy = check_policy(mdp, policy)
    models = np.asarray(models, dtype=float)
    states = np.arange(mdp.num_states)
    p_pi = models[:, states, policy, :]
    r_pi = np.einsum("nij,ij->ni", p_pi, mdp.rewards[states, policy, :])
    lhs = np.eye(mdp.num_states)[None] - mdp.discount * p_pi
    values = np.linalg.solve(lhs, r_pi[..., None])[..., 0]
    return values @ mdp.initial


def empirical_guarantee_check(mdp: TabularMdp, samples: PosteriorSamples, policy,
                              rho_hat: float) -> float:
    """Fraction of models under which ``policy`` earns at least ``rho_hat``."""
    returns = policy_returns(mdp, samples.models, policy)
    return float(np.mean(returns >= rho_hat - GUARANTEE_SLACK))


def set_membership(samples: PosteriorSamples, amb) -> np.ndarray:
    """Boolean array (n, S, A): whether each sampled row lies in its ball."""
    models = samples.models
    off_support = np.isinf(amb.weights)
    outside = (models > 0) & off_support[None]
    diff = np.where(off_support[None], 0.0, models - amb.nominal[None])
    dist = batch_norms(diff, np.where(off_support, 1.0, amb.weights)[None], amb.kind)
    return (dist <= amb.budgets[None] + FEASIBILITY_SLACK) & ~outside.any(axis=3)


def empirical_set_coverage(samples: PosteriorSamples, amb) -> float:
    """Fraction of models contained in the ambiguity set for all (s, a) jointly."""
    inside = set_membership(samples, amb)
    return float(np.mean(inside.reshape(len(samples), -1).all(axis=1)))


def percentile_of_best_response(mdp: TabularMdp, samples: PosteriorSamples, delta: float,
                                tol: float = 1e-6) -> float:
    """Lower ``delta``-quantile of the per-model optimal returns.

    Uses the ``floor(delta * n) + 1``-th smallest optimum, so ``delta = 0``
    gives the minimum.
    """
    optima = []
    for model in samples.models:
        values, _ = solve_nominal(mdp, model, tol=tol)
        optima.append(float(mdp.initial @ values))
    optima = np.sort(optima)
    index = min(int(np.floor(delta * len(optima))), len(optima) - 1)
    return float(optima[index])


# -- CSV exchange formats -----------------------------------------------------

DATASET_COLUMNS = ["idstatefrom", "idaction", "idstateto"]
POSTERIOR_COLUMNS = ["sample_id", "idstatefrom", "idaction", "idstateto", "probability"]


def write_dataset_csv(path, dataset: TransitionDataset) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        writer.writerows(dataset.triples.tolist())


def read_dataset_csv(path, num_states: int, num_actions: int) -> TransitionDataset:
    with Path(path).open(newline="") as fh:
        rows = [[int(r[c]) for c in DATASET_COLUMNS] for r in csv.DictReader(fh)]
    return TransitionDataset.from_triples(np.array(rows, dtype=np.int64).reshape(-1, 3),
                                          num_states, num_actions)


def write_posterior_csv(path, samples: PosteriorSamples) -> None:
    """Long format; zero probabilities are omitted."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POSTERIOR_COLUMNS)
        for i, s, a, t in zip(*np.nonzero(samples.models)):
            writer.writerow([i, s, a, t, repr(float(samples.models[i, s, a, t]))])


def read_posterior_csv(path, mdp: TabularMdp) -> PosteriorSamples:
    """Read externally generated posterior samples and check them against ``mdp``.

    Raises
    ------
    SupportViolationError
        If a sample puts mass outside the MDP support.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidModelError("posterior file is empty")
    ids = np.array([int(r["sample_id"]) for r in rows])
    _, index = np.unique(ids, return_inverse=True)
    models = np.zeros((index.max() + 1,) + mdp.shape)
    for k, r in zip(index, rows):
        models[k, int(r["idstatefrom"]), int(r["idaction"]), int(r["idstateto"])] = float(
            r["probability"])
    if np.any((models > 0) & ~mdp.support[None]):
        raise SupportViolationError("posterior sample puts mass outside the MDP support")
    return PosteriorSamples(models, seed=None, algorithm=f"imported from {Path(path).name}")
