"""Scikit-learn style wrapper around the shape-then-size construction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ambiguity import build_ambiguity_set
from .bayes import (PosteriorSamples, TransitionDataset, dirichlet_posterior, sample_posterior,
                    uniform_prior)
from .mdp import TabularMdp
from .robust import robust_value_iteration


def check_transitions(X, mdp: TabularMdp):
    """Coerce ``X`` to a dataset or posterior samples matching ``mdp``.

    Accepts an integer array of ``(s, a, s')`` rows, a
    :class:`TransitionDataset` or :class:`PosteriorSamples`.
    """
    if isinstance(X, PosteriorSamples):
        if X.models.shape[1:] != mdp.shape:
            raise ValueError(f"samples have shape {X.models.shape[1:]}, MDP has {mdp.shape}")
        return X
    if isinstance(X, TransitionDataset):
        if (X.num_states, X.num_actions) != (mdp.num_states, mdp.num_actions):
            raise ValueError("dataset dimensions do not match the MDP")
        return X
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an array of (s, a, s') rows, got shape {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("transition indices must be integers")
    return TransitionDataset.from_triples(arr.astype(np.int64), mdp.num_states, mdp.num_actions)


def check_states(states, num_states: int) -> np.ndarray:
    states = np.asarray(states)
    if states.size and not np.all(np.equal(np.mod(states, 1), 0)):
        raise ValueError("states must be integer indices")
    states = states.astype(np.int64)
    if states.size and (states.min() < 0 or states.max() >= num_states):
        raise ValueError(f"state index out of range [0, {num_states})")
    return states


class RobustPercentilePolicy(BaseEstimator):
    """Policy maximizing a guaranteed return level under model uncertainty.

    Parameters
    ----------
    mdp : TabularMdp
        Rewards, discount, initial distribution and successor support.
    delta : float, default 0.05
        Allowed probability that the true return falls below the guarantee.
    norm : {"l1", "linf"}
    shape_mode : {"uniform", "analytic", "socp"}
    mode : {"bayesian", "frequentist"}
        Bayesian fits draw ``n_samples`` models from a Dirichlet posterior
        when given transitions; frequentist fits use concentration bounds.
    n_samples : int, default 20
    prior_concentration : float, default 1.0
    inequality : str, optional
        Frequentist bound name.
    tol : float, default 1e-6
    random_state : int or None

    Attributes
    ----------
    ambiguity_set_ : AmbiguitySet
    solution_ : RobustSolution
    policy_ : ndarray of shape (S,)
    robust_return_ : float
        Return guaranteed under every model in the ambiguity set.
    """

    def __init__(self, mdp=None, delta=0.05, norm="l1", shape_mode="analytic", mode="bayesian",
                 n_samples=20, prior_concentration=1.0, inequality=None, tol=1e-6,
                 random_state=None):
        self.mdp = mdp
        self.delta = delta
        self.norm = norm
        self.shape_mode = shape_mode
        self.mode = mode
        self.n_samples = n_samples
        self.prior_concentration = prior_concentration
        self.inequality = inequality
        self.tol = tol
        self.random_state = random_state

    def _check_params(self):
        if not isinstance(self.mdp, TabularMdp):
            raise TypeError("mdp must be a TabularMdp")
        if self.mode not in ("bayesian", "frequentist"):
            raise ValueError(f"mode must be 'bayesian' or 'frequentist', got {self.mode!r}")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be positive")

    def fit(self, X, y=None):
        """Build the ambiguity set from ``X`` and solve the robust MDP.

        Parameters
        ----------
        X : array of shape (n, 3), TransitionDataset or PosteriorSamples
        y : ignored
        """
        self._check_params()
        data = check_transitions(X, self.mdp)
        if isinstance(data, TransitionDataset) and self.mode == "bayesian":
            posterior = dirichlet_posterior(data, uniform_prior(self.mdp, self.prior_concentration))
            data = sample_posterior(posterior, int(self.n_samples), self.random_state)
        elif isinstance(data, PosteriorSamples) and self.mode == "frequentist":
            raise ValueError("frequentist mode needs observed transitions, not posterior samples")
        self.ambiguity_set_ = build_ambiguity_set(
            self.mdp, data, self.delta, self.norm, self.shape_mode,
            inequality=self.inequality if self.mode == "frequentist" else None, tol=self.tol)
        self.solution_ = robust_value_iteration(self.mdp, self.ambiguity_set_, tol=self.tol)
        self.policy_ = self.solution_.policy
        self.robust_return_ = self.solution_.robust_return
        return self

    def predict(self, states):
        """Action chosen in each of ``states``."""
        check_is_fitted(self, "policy_")
        return self.policy_[check_states(states, self.mdp.num_states)]

    def score(self, X=None, y=None) -> float:
        """Guaranteed return of the fitted policy."""
        check_is_fitted(self, "robust_return_")
        return float(self.robust_return_)
