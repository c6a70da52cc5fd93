"""Shape (weights) and size (budgets) optimization of weighted-norm ambiguity sets.

Weights minimize the dual-norm bound ``2 psi ||z - lam||_*`` on the span of a
ball over unit-norm weight vectors. For an L1 ball the dual is the
L-infinity norm with weights ``1/w`` and the optimum is ``w ~ |z - lam|``;
for an L-infinity ball the dual is weighted L1 and the optimum is
``w ~ |z - lam|^(1/3)``.

Budgets come either from posterior-sample quantiles (Bayesian credible
regions) or from concentration inequalities solved by bisection
(frequentist sets).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .bayes import PosteriorSamples, TransitionDataset
from .exceptions import SupportViolationError
from .mdp import TabularMdp, compute_z, solve_nominal
from .norms import NormKind, batch_norms
from .robust import AmbiguitySet

WEIGHT_FLOOR = 1e-3
BISECTION_TOL = 1e-10


class ShapeMode(str, enum.Enum):
    UNIFORM = "uniform"
    ANALYTIC = "analytic"
    SOCP = "socp"


class Inequality(str, enum.Enum):
    HOEFFDING_LINF = "hoeffding_linf"
    HOEFFDING_L1 = "hoeffding_l1"
    BERNSTEIN_L1 = "bernstein_l1"

    @property
    def kind(self) -> NormKind:
        return NormKind.LINF if self is Inequality.HOEFFDING_LINF else NormKind.L1


# -- weights ------------------------------------------------------------------

def _finite_mask(z, mask):
    z = np.asarray(z, dtype=float)
    if mask is None:
        return z, np.ones(z.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask excludes every entry")
    return z, mask


def default_lambda(z, kind, mask=None) -> float:
    """Median of ``z`` for L1 balls and midrange for L-infinity balls.

    Entries where ``mask`` is false are ignored. The even-length median is
    the average of the two central values.
    """
    z, mask = _finite_mask(z, mask)
    vals = z[mask]
    if NormKind.parse(kind) is NormKind.L1:
        return float(np.median(vals))
    return float((vals.max() + vals.min()) / 2.0)


def normalize_weights(raw, mask=None, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Clamp zero entries to ``floor`` and scale finite entries to unit 2-norm.

    Entries outside ``mask`` become ``inf``. An all-zero input falls back to
    uniform weights.
    """
    raw = np.asarray(raw, dtype=float)
    _, mask = _finite_mask(raw, mask)
    vals = raw[mask]
    if not np.any(vals > 0):
        vals = np.ones_like(vals)
    else:
        vals = np.where(vals > 0, vals, floor)
    out = np.full(raw.shape, np.inf)
    out[mask] = vals / np.linalg.norm(vals)
    return out


def uniform_weights(size: int, mask=None) -> np.ndarray:
    """Equal weights of unit 2-norm over the entries in ``mask``."""
    return normalize_weights(np.ones(size), mask)


def linear_weights(b, mask=None) -> np.ndarray:
    """``w_i = b_i / ||b||_2``: minimizes ``max_i b_i / w_i`` on the unit sphere."""
    return normalize_weights(np.abs(b), mask)


def cube_root_weights(b, mask=None) -> np.ndarray:
    """``w_i = b_i^(1/3) / sqrt(sum_j b_j^(2/3))``: minimizes ``sum_i b_i / w_i``."""
    return normalize_weights(np.cbrt(np.abs(b)), mask)


def optimize_weights_analytic(z, lam, kind, mask=None) -> np.ndarray:
    """Weights minimizing the dual-norm span bound for a fixed ``lam``.

    Parameters
    ----------
    z : array_like
        Successor values ``r + discount * v``.
    lam : float
        Shift of ``z``; see :func:`default_lambda`.
    kind : NormKind
        Norm of the ball. L1 balls get :func:`linear_weights`; L-infinity
        balls get :func:`cube_root_weights`.
    mask : array_like of bool, optional
        Reachable successors; the rest get infinite weight.
    """
    b = np.abs(np.asarray(z, dtype=float) - lam)
    if NormKind.parse(kind) is NormKind.L1:
        return linear_weights(b, mask)
    return cube_root_weights(b, mask)


def optimize_weights_socp(z, psi: float, mask=None):
    """Jointly optimal weights and shift for the L1-ball span bound.

    Solves ``min psi * c`` over ``g >= |z - lam|``, ``||g||_2 <= c``. For a
    fixed ``lam`` the optimum is ``g = |z - lam|`` so the problem reduces to
    ``min_lam psi * ||z - lam||_2``, attained at the mean of ``z``.

    Returns
    -------
    weights : ndarray
        ``g / c`` after clamping and normalization.
    bound : float
        Optimal objective ``psi * c``.
    lam : float
        Optimal shift.
    """
    if psi < 0:
        raise ValueError(f"psi must be nonnegative, got {psi}")
    z, mask = _finite_mask(z, mask)
    lam = float(np.mean(z[mask]))
    g = np.where(mask, np.abs(z - lam), 0.0)
    c = float(np.linalg.norm(g))
    return normalize_weights(g, mask), psi * c, lam


def choose_norm(values) -> NormKind:
    """Prefer L1 when the value function's spread favors it, else L-infinity."""
    v = np.asarray(values, dtype=float)
    lhs = np.abs(v - v.mean()).sum()
    rhs = math.sqrt(v.size) * np.abs(v - np.median(v)).max()
    return NormKind.L1 if lhs > rhs else NormKind.LINF


# -- Bayesian budgets ---------------------------------------------------------

def quantile_index(delta: float, n: int, num_states: int, num_actions: int) -> int:
    """1-based order statistic ``ceil((1 - delta / (S A)) n)`` clamped to ``[1, n]``."""
    level = 1.0 - delta / (num_states * num_actions)
    return int(min(max(math.ceil(level * n - 1e-9), 1), n))


def sample_distances(samples: PosteriorSamples, nominal, weights, kind) -> np.ndarray:
    """Weighted distances ``(n, S, A)`` of every sampled row to ``nominal``.

    Raises
    ------
    SupportViolationError
        If a sample has mass where the weight is infinite.
    """
    models = samples.models
    off = np.isinf(weights)
    if np.any((models > 0) & off[None]):
        raise SupportViolationError("posterior sample has mass on an infinite-weight successor")
    diff = np.where(off[None], 0.0, models - nominal[None])
    return batch_norms(diff, np.where(off, 1.0, weights)[None], kind)


def bayes_budget(samples: PosteriorSamples, weights, kind, delta: float):
    """Sample-mean nominal and quantile budget per state-action pair.

    Returns
    -------
    nominal : ndarray of shape (S, A, S)
    budgets : ndarray of shape (S, A)
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    n, n_states, n_actions, _ = samples.models.shape
    nominal = samples.mean()
    # renormalize so rows sum to one to working precision
    nominal = nominal / nominal.sum(axis=2, keepdims=True)
    dist = sample_distances(samples, nominal, np.asarray(weights, dtype=float), kind)
    index = quantile_index(delta, n, n_states, n_actions)
    budgets = np.sort(dist, axis=0)[index - 1]
    return nominal, budgets


# -- frequentist budgets ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrequentistSpec:
    """Sample counts per state-action pair with a confidence level.

    Zero counts are allowed and yield an infinite budget.
    """

    counts: np.ndarray
    confidence: float
    inequality: Inequality = Inequality.HOEFFDING_L1

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be nonnegative integers")
        if not 0.0 < self.confidence < 0.5:
            raise ValueError(f"confidence delta must lie in (0, 0.5), got {self.confidence}")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "inequality", Inequality(self.inequality))


def _rhs_linf(psi, n, w, num_states, num_actions):
    fin = np.isfinite(w)
    ws = np.where(fin, w, 1.0)
    terms = np.where(fin, np.exp(-2.0 * psi[..., None] ** 2 * n[..., None] / ws ** 2), 0.0)
    return 2.0 * num_states * num_actions * terms.sum(axis=-1)


def _sorted_with_coefficients(w):
    fin = np.isfinite(w)
    k = fin.sum(axis=-1, keepdims=True)
    # non-increasing order, unreachable entries last
    ws = -np.sort(-np.where(fin, w, -np.inf), axis=-1)
    pos = np.arange(1, w.shape[-1] + 1)
    coef = np.where(pos < k, np.exp2((k - pos).astype(float)), 0.0)
    return np.where(np.isfinite(ws), ws, 1.0), coef


def _rhs_l1(psi, n, w, num_states, num_actions, bernstein=False):
    ws, coef = _sorted_with_coefficients(w)
    p = psi[..., None]
    if bernstein:
        expo = -3.0 * p ** 2 * n[..., None] / (6.0 * ws ** 2 + 4.0 * p * ws)
    else:
        expo = -(p ** 2) * n[..., None] / (2.0 * ws ** 2)
    return 2.0 * num_states * num_actions * (coef * np.exp(expo)).sum(axis=-1)


def budget_rhs(inequality, psi, counts, weights, num_states: int, num_actions: int):
    """Right-hand side of the concentration bound at budget ``psi``."""
    inequality = Inequality(inequality)
    psi = np.asarray(psi, dtype=float)
    n = np.broadcast_to(np.asarray(counts, dtype=float), psi.shape)
    w = np.broadcast_to(np.asarray(weights, dtype=float), psi.shape + np.shape(weights)[-1:])
    if inequality is Inequality.HOEFFDING_LINF:
        return _rhs_linf(psi, n, w, num_states, num_actions)
    return _rhs_l1(psi, n, w, num_states, num_actions,
                   bernstein=inequality is Inequality.BERNSTEIN_L1)


def _bisect(rhs, delta, shape):
    lo = np.zeros(shape)
    hi = np.ones(shape)
    while True:
        grow = rhs(hi) >= delta
        if not grow.any():
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
    while np.max(hi - lo, initial=0.0) > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        ok = rhs(mid) <= delta
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


def frequentist_budget(spec: FrequentistSpec, weights, num_states: int, num_actions: int):
    """Smallest budget whose concentration bound is at most ``spec.confidence``.

    ``weights`` has shape ``counts.shape + (S,)``; infinite entries are
    unreachable and dropped from the sum. Pairs with fewer than two reachable
    successors get budget 0 for the L1 bounds, pairs with zero counts get
    ``inf``.
    """
    weights = np.asarray(weights, dtype=float)
    counts = np.broadcast_to(spec.counts, weights.shape[:-1]).astype(float)
    seen = counts > 0
    n = np.where(seen, counts, 1.0)

    def rhs(psi):
        return budget_rhs(spec.inequality, psi, n, weights, num_states, num_actions)

    psi = _bisect(rhs, spec.confidence, counts.shape)
    if spec.inequality is not Inequality.HOEFFDING_LINF:
        psi = np.where(np.isfinite(weights).sum(axis=-1) < 2, 0.0, psi)
    return np.where(seen, psi, np.inf)


def hoeffding_linf_budget(spec: FrequentistSpec, weights, num_states: int, num_actions: int):
    """Budget from ``2SA sum_i exp(-2 psi^2 n / w_i^2) <= delta``."""
    spec = FrequentistSpec(spec.counts, spec.confidence, Inequality.HOEFFDING_LINF)
    return frequentist_budget(spec, weights, num_states, num_actions)


def hoeffding_l1_budget(spec: FrequentistSpec, weights, num_states: int, num_actions: int):
    """Budget from ``2SA sum_{i<k} 2^(k-i) exp(-psi^2 n / (2 w_i^2)) <= delta``.

    Weights are sorted non-increasing internally; ``k`` is the number of
    reachable successors.
    """
    spec = FrequentistSpec(spec.counts, spec.confidence, Inequality.HOEFFDING_L1)
    return frequentist_budget(spec, weights, num_states, num_actions)


def bernstein_l1_budget(spec: FrequentistSpec, weights, num_states: int, num_actions: int):
    """Budget from ``2SA sum_{i<k} 2^(k-i) exp(-3 psi^2 n / (6 w_i^2 + 4 psi w_i)) <= delta``."""
    spec = FrequentistSpec(spec.counts, spec.confidence, Inequality.BERNSTEIN_L1)
    return frequentist_budget(spec, weights, num_states, num_actions)


# -- set assembly -------------------------------------------------------------

@dataclass
class BuildTrace:
    """Intermediate artifacts of one ambiguity-set construction."""

    nominal_values: np.ndarray
    z: np.ndarray
    uniform_budgets: np.ndarray
    weights: np.ndarray
    budgets: np.ndarray
    lambdas: np.ndarray = field(default=None)


def empirical_model(mdp: TabularMdp, dataset: TransitionDataset) -> np.ndarray:
    """Observed frequencies; unobserved pairs get the uniform row over the support."""
    counts = dataset.counts.astype(float)
    totals = counts.sum(axis=2, keepdims=True)
    uniform = mdp.support / mdp.support.sum(axis=2, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), uniform)


def _shape_weights(mdp, z, uniform_budgets, kind, shape_mode):
    n_states, n_actions, _ = mdp.shape
    weights = np.full(mdp.shape, np.inf)
    lambdas = np.full((n_states, n_actions), np.nan)
    for s in range(n_states):
        for a in range(n_actions):
            mask = mdp.support[s, a]
            if shape_mode is ShapeMode.ANALYTIC:
                lam = default_lambda(z[s, a], kind, mask)
                weights[s, a] = optimize_weights_analytic(z[s, a], lam, kind, mask)
            else:
                psi = uniform_budgets[s, a]
                weights[s, a], _, lam = optimize_weights_socp(
                    z[s, a], psi if np.isfinite(psi) else 1.0, mask)
            lambdas[s, a] = lam
    return weights, lambdas


def build_ambiguity_set(mdp: TabularMdp, data, delta: float, kind="l1", shape_mode="analytic",
                        *, inequality=None, split_data: bool = False, tol: float = 1e-6,
                        return_trace: bool = False):
    """Construct an ambiguity set by the shape-then-size scheme.

    The steps are: solve the nominal model for ``v'`` and ``z'``; compute
    budgets for uniform weights; optimize the weights of each ball along
    ``z'``; recompute budgets for those weights.

    Parameters
    ----------
    mdp : TabularMdp
    data : PosteriorSamples or TransitionDataset
        Posterior draws select the Bayesian construction (sample-mean
        nominal, quantile budgets). A dataset selects the frequentist one
        (empirical nominal, concentration-bound budgets).
    delta : float
        Allowed failure probability in ``(0, 0.5)``.
    kind : NormKind or str
    shape_mode : {"uniform", "analytic", "socp"}
        ``socp`` is available for L1 balls only.
    inequality : Inequality, optional
        Frequentist bound; defaults to Hoeffding for the chosen norm.
    split_data : bool, default False
        Frequentist only. Estimate ``z'`` from one half of the dataset and
        the nominal and budgets from the other. Off by default, so one
        dataset serves both purposes; weights tuned on the same data that
        sets the budgets weaken the formal guarantee.
    return_trace : bool, default False
        Also return a :class:`BuildTrace` with the intermediate artifacts.
    """
    kind = NormKind.parse(kind)
    shape_mode = ShapeMode(shape_mode)
    if shape_mode is ShapeMode.SOCP and kind is not NormKind.L1:
        raise ValueError("the conic weight optimization applies to L1 balls only")
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    n_states, n_actions, _ = mdp.shape
    uniform = np.stack([np.stack([uniform_weights(n_states, mdp.support[s, a])
                                  for a in range(n_actions)]) for s in range(n_states)])

    if isinstance(data, PosteriorSamples):
        if data.models.shape[1:] != mdp.shape:
            raise ValueError("posterior samples do not match the MDP dimensions")
        if np.any((data.models > 0) & ~mdp.support[None]):
            raise SupportViolationError("posterior sample puts mass outside the MDP support")

        def budgets_for(weights):
            return bayes_budget(data, weights, kind, delta)

        shape_model = None
    elif isinstance(data, TransitionDataset):
        inequality = Inequality(inequality) if inequality is not None else (
            Inequality.HOEFFDING_L1 if kind is NormKind.L1 else Inequality.HOEFFDING_LINF)
        if inequality.kind is not kind:
            raise ValueError(f"{inequality.value} bounds do not apply to {kind.value} balls")
        budget_data, shape_data = data.split() if split_data else (data, data)
        counts = budget_data.counts
        if np.any((counts > 0) & ~mdp.support):
            raise SupportViolationError("observed transition outside the MDP support")
        spec = FrequentistSpec(counts.sum(axis=2), delta, inequality)
        nominal_f = empirical_model(mdp, budget_data)

        def budgets_for(weights):
            return nominal_f, frequentist_budget(spec, weights, n_states, n_actions)

        shape_model = empirical_model(mdp, shape_data)
    else:
        raise TypeError("data must be PosteriorSamples or a TransitionDataset")

    nominal, uniform_budgets = budgets_for(uniform)
    model = nominal if shape_model is None else shape_model
    v_nominal, _ = solve_nominal(mdp, model, tol=tol)
    z = compute_z(mdp, v_nominal)
    if shape_mode is ShapeMode.UNIFORM:
        weights, lambdas, budgets = uniform, None, uniform_budgets
    else:
        weights, lambdas = _shape_weights(mdp, z, uniform_budgets, kind, shape_mode)
        _, budgets = budgets_for(weights)
    amb = AmbiguitySet(kind, nominal, weights, budgets)
    if not return_trace:
        return amb
    trace = BuildTrace(v_nominal, z, uniform_budgets, weights, budgets, lambdas)
    return amb, trace
