"""Benchmark MDP generators.

Each generator returns ``(mdp, true_model)`` where the MDP's support mask
is the set of successors with positive true probability; the example1
generator returns a Dirichlet posterior instead of a true model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bayes import DirichletPosterior
from .mdp import TabularMdp, check_model

DEFAULT_DISCOUNTS = {
    "riverswim": 0.95,
    "machine_replacement": 0.90,
    "population": 0.95,
    "inventory": 0.95,
    "example1": 0.95,
}
UNSUPPORTED = {
    "cartpole": "Cart-Pole needs a physics simulator and state aggregation; "
                "only tabular domains are built in",
}


def _finish(rewards, model, discount, initial):
    model = np.asarray(model, dtype=float)
    model = model / model.sum(axis=2, keepdims=True)
    mdp = TabularMdp(rewards, discount, initial, support=model > 0)
    return mdp, check_model(mdp, model)


def riverswim(discount: float = DEFAULT_DISCOUNTS["riverswim"]):
    """Six-state river: drifting left is safe, swimming right pays off rarely."""
    n = 6
    model = np.zeros((n, 2, n))
    rewards = np.zeros((n, 2, n))
    for s in range(n):
        model[s, 0, max(s - 1, 0)] = 1.0
    rewards[0, 0, 0] = 5.0
    model[0, 1, 0], model[0, 1, 1] = 0.7, 0.3
    for s in range(1, n - 1):
        model[s, 1, s - 1], model[s, 1, s], model[s, 1, s + 1] = 0.1, 0.6, 0.3
    model[n - 1, 1, n - 1], model[n - 1, 1, n - 2] = 0.3, 0.7
    rewards[n - 1, 1, n - 1] = 10000.0
    initial = np.zeros(n)
    initial[[1, 2]] = 0.5
    return _finish(rewards, model, discount, initial)


def machine_replacement(discount: float = DEFAULT_DISCOUNTS["machine_replacement"],
                        wear: float = 0.8, broken_cost: float = 20.0,
                        repair_costs=(2.0, 10.0), repair_success=(0.8, 0.4)):
    """Ten-state machine: eight wear levels plus two repair states.

    Action 0 operates the machine, which advances wear with probability
    ``wear``; the last wear level is broken and costs ``broken_cost`` per
    step. Action 1 sends the machine to repair state R1 (probability 0.6)
    or R2 (0.4). A repair state returns to the new condition with its
    success probability and costs its repair cost per step, under either
    action.
    """
    n_wear = 8
    n = n_wear + 2
    model = np.zeros((n, 2, n))
    rewards = np.zeros((n, 2, n))
    for s in range(n_wear - 1):
        model[s, 0, s], model[s, 0, s + 1] = 1.0 - wear, wear
    model[n_wear - 1, 0, n_wear - 1] = 1.0
    rewards[n_wear - 1, 0, n_wear - 1] = -broken_cost
    for s in range(n_wear):
        model[s, 1, n_wear], model[s, 1, n_wear + 1] = 0.6, 0.4
    for k, (cost, success) in enumerate(zip(repair_costs, repair_success)):
        r = n_wear + k
        for a in range(2):
            model[r, a, 0], model[r, a, r] = success, 1.0 - success
            rewards[r, a, :] = -cost
    initial = np.zeros(n)
    initial[0] = 1.0
    return _finish(rewards, model, discount, initial)


def _discretized_normal(mean, sd, size):
    """Integer-rounded normal on ``0..size-1`` with tails folded into the ends."""
    edges = np.arange(size + 1) - 0.5
    cdf = norm.cdf(edges, loc=mean, scale=sd)
    cdf[0], cdf[-1] = 0.0, 1.0
    probs = np.diff(cdf)
    return probs / probs.sum()


def population_growth(num_states: int = 51, discount: float = DEFAULT_DISCOUNTS["population"],
                      growth=(1.5, 0.75), growth_sd: float = 0.2, control_cost: float = 10.0,
                      initial_population: int = 10, prune: float = 1e-4):
    """Invasive population with an optional control measure.

    The next population is a rounded normal with mean ``N * growth[a]`` and
    standard deviation ``max(growth_sd * N, 1)``, truncated at the carrying
    limit. Each step costs the next population plus ``control_cost`` when
    controlling. Successor masses below ``prune`` are dropped. Population 0
    is absorbing.
    """
    if num_states < 2:
        raise ValueError("population model needs at least two states")
    n = num_states
    model = np.zeros((n, 2, n))
    for a in range(2):
        model[0, a, 0] = 1.0
        for pop in range(1, n):
            probs = _discretized_normal(pop * growth[a], max(growth_sd * pop, 1.0), n)
            probs[probs < prune] = 0.0
            model[pop, a] = probs / probs.sum()
    rewards = -np.broadcast_to(np.arange(n, dtype=float), (n, 2, n)).copy()
    rewards[:, 1, :] -= control_cost
    initial = np.zeros(n)
    initial[min(initial_population, n - 1)] = 1.0
    return _finish(rewards, model, discount, initial)


def inventory(num_states: int = 31, discount: float = DEFAULT_DISCOUNTS["inventory"],
              purchase_cost: float = 2.49, sale_price: float = 3.99, holding_cost: float = 0.03):
    """Single-item inventory with normal demand of mean ``S/4`` and sd ``S/6``.

    Action ``q`` orders ``q`` units, truncated to the free capacity. Sales
    are capped by the stock on hand after delivery; the purchase cost is
    paid on delivered units and holding cost on the end-of-period stock.
    """
    if num_states < 2:
        raise ValueError("inventory model needs at least two states")
    n = num_states
    demand = _discretized_normal(n / 4.0, n / 6.0, n)
    model = np.zeros((n, n, n))
    rewards = np.zeros((n, n, n))
    nxt = np.arange(n)
    for s in range(n):
        for q in range(n):
            stock = s + min(q, n - 1 - s)
            for d, pd in enumerate(demand):
                model[s, q, max(stock - d, 0)] += pd
            delivered = stock - s
            rewards[s, q] = (sale_price * (stock - nxt) - purchase_cost * delivered
                             - holding_cost * nxt)
    initial = np.zeros(n)
    initial[0] = 1.0
    return _finish(rewards, model, discount, initial)


def example1(discount: float = DEFAULT_DISCOUNTS["example1"]):
    """One decision followed by absorption.

    State 0 moves to states 1, 2, 3 with rewards 0.25, 0.25, -1 and a
    Dirichlet(10, 10, 1) posterior; states 1 to 3 are absorbing with zero
    reward.
    """
    n = 4
    rewards = np.zeros((n, 1, n))
    rewards[0, 0, 1:] = [0.25, 0.25, -1.0]
    alpha = np.zeros((n, 1, n))
    alpha[0, 0, 1:] = [10.0, 10.0, 1.0]
    for s in range(1, n):
        alpha[s, 0, s] = 1.0
    initial = np.zeros(n)
    initial[0] = 1.0
    mdp = TabularMdp(rewards, discount, initial, support=alpha > 0)
    return mdp, DirichletPosterior(alpha)


GENERATORS = {
    "riverswim": riverswim,
    "machine_replacement": machine_replacement,
    "population": population_growth,
    "inventory": inventory,
    "example1": example1,
}
ALIASES = {"rs": "riverswim", "mr": "machine_replacement", "machine": "machine_replacement",
           "pg": "population", "population_growth": "population", "im": "inventory"}


def canonical_name(name: str) -> str:
    key = name.lower().replace("-", "_")
    key = ALIASES.get(key, key)
    if key.replace("_", "") in UNSUPPORTED:
        raise ValueError(UNSUPPORTED[key.replace("_", "")])
    if key not in GENERATORS:
        raise ValueError(f"unknown domain {name!r}; choose from {sorted(GENERATORS)}")
    return key


@dataclass(frozen=True)
class DomainSpec:
    """Name and keyword parameters of a built-in domain."""

    name: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))

    @property
    def discount(self) -> float:
        return float(self.parameters.get("discount", DEFAULT_DISCOUNTS[self.name]))

    def build(self):
        return GENERATORS[self.name](**self.parameters)


def make_domain(name: str, **parameters):
    """Build a domain by name, e.g. ``make_domain("riverswim")``."""
    return DomainSpec(name, dict(parameters)).build()
