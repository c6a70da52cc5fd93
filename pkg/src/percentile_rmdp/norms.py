"""Weighted norms and worst-case expectations over weighted-norm balls.

A ball is ``{p in simplex : ||p - nominal||_w <= budget}`` where the weighted
L1 norm is ``sum_i w_i |x_i|`` and the weighted L-infinity norm is
``max_i w_i |x_i|``. Infinite weights mark unreachable successors; every
member of the ball has zero mass there.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _inner
from .exceptions import InvalidSetError

SIMPLEX_ATOL = 1e-12
FEASIBILITY_SLACK = 1e-9


class NormKind(str, enum.Enum):
    L1 = "l1"
    LINF = "linf"

    @classmethod
    def parse(cls, value) -> "NormKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        aliases = {"l1": cls.L1, "weightedl1": cls.L1, "linf": cls.LINF,
                   "weightedlinf": cls.LINF, "linfty": cls.LINF, "l8": cls.LINF}
        if key not in aliases:
            raise ValueError(f"unknown norm kind {value!r}")
        return aliases[key]

    @property
    def code(self) -> int:
        return _inner.L1 if self is NormKind.L1 else _inner.LINF


@dataclass(frozen=True, eq=False)
class BallSpec:
    """One weighted-norm ball intersected with the simplex."""

    kind: NormKind
    nominal: np.ndarray
    weights: np.ndarray
    budget: float

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind.parse(self.kind))
        nominal = np.asarray(self.nominal, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nominal", nominal)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "budget", float(self.budget))
        validate_ball(nominal, weights, self.budget)


def validate_ball(nominal, weights, budget) -> None:
    """Raise :class:`InvalidSetError` unless the ball is well formed."""
    nominal = np.asarray(nominal, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if nominal.ndim != 1 or nominal.shape != weights.shape:
        raise InvalidSetError("nominal and weights must be 1-D arrays of equal length")
    if np.any(nominal < 0) or abs(nominal.sum() - 1.0) > SIMPLEX_ATOL:
        raise InvalidSetError("nominal must lie on the probability simplex")
    if np.any(np.isnan(weights)) or np.any(weights <= 0):
        raise InvalidSetError("weights must be positive or +inf")
    if np.any(np.isinf(weights) & (nominal > 0)):
        raise InvalidSetError("infinite weight on a successor with nominal mass")
    if np.all(np.isinf(weights)):
        raise InvalidSetError("at least one weight must be finite")
    if not budget >= 0:
        raise InvalidSetError(f"budget must be nonnegative, got {budget}")


def weighted_norm(x, w, kind) -> float:
    """Weighted L1 or L-infinity norm; ``inf`` if ``x`` is nonzero where ``w`` is."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    with np.errstate(invalid="ignore"):
        terms = np.where(x == 0, 0.0, w * np.abs(x))
    if NormKind.parse(kind) is NormKind.L1:
        return float(terms.sum())
    return float(terms.max(initial=0.0))


def batch_norms(x, w, kind) -> np.ndarray:
    """Row-wise :func:`weighted_norm` along the last axis."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        terms = np.where(x == 0, 0.0, np.asarray(w) * np.abs(x))
    if NormKind.parse(kind) is NormKind.L1:
        return terms.sum(axis=-1)
    return terms.max(axis=-1, initial=0.0)


def batch_worst_case(kind, z, nominal, weights, budgets, sense="min", witness=False):
    """Vectorized worst-case expectation over many balls.

    ``z``, ``nominal`` and ``weights`` have shape ``(..., S)`` and ``budgets``
    the leading shape. Returns the optimal values, and the optimizing
    distributions when ``witness`` is true. Inputs are not validated.
    """
    kind = NormKind.parse(kind)
    z = np.asarray(z, dtype=float)
    lead = z.shape[:-1]
    n = z.shape[-1]
    zz = z.reshape(-1, n)
    if sense == "max":
        zz = -zz
    elif sense != "min":
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    pb = np.ascontiguousarray(np.broadcast_to(nominal, z.shape).reshape(-1, n), dtype=float)
    ww = np.ascontiguousarray(np.broadcast_to(weights, z.shape).reshape(-1, n), dtype=float)
    psi = np.ascontiguousarray(np.broadcast_to(budgets, lead).reshape(-1), dtype=float)
    out = np.empty_like(pb)
    values = _inner.batch_min(kind.code, np.ascontiguousarray(zz), pb, ww, psi, out)
    if sense == "max":
        values = -values
    values = values.reshape(lead)
    if witness:
        return values, out.reshape(z.shape)
    return values


def worst_case_expectation(z, ball: BallSpec, sense: str = "min"):
    """Exact optimum of ``p^T z`` over the ball.

    Returns
    -------
    value : float
    witness : ndarray
        A distribution in the ball attaining ``value``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != ball.nominal.shape:
        raise InvalidSetError("z and the ball have different dimensions")
    value, p = batch_worst_case(ball.kind, z[None], ball.nominal[None], ball.weights[None],
                                np.array([ball.budget]), sense=sense, witness=True)
    return float(value[0]), p[0]


def span(z, ball: BallSpec) -> float:
    """Largest difference ``(p1 - p2)^T z`` over two members of the ball."""
    hi, _ = worst_case_expectation(z, ball, "max")
    lo, _ = worst_case_expectation(z, ball, "min")
    return hi - lo


def dual_norm(x, w, kind) -> float:
    """Norm dual to the ``w``-weighted ``kind`` norm, evaluated at ``x``.

    The dual of weighted L1 is L-infinity weighted by ``1/w`` and vice versa.
    Infinite weights contribute nothing.
    """
    scaled = np.abs(np.asarray(x, dtype=float)) / np.asarray(w, dtype=float)
    if NormKind.parse(kind) is NormKind.L1:
        return float(scaled.max(initial=0.0))
    return float(scaled.sum())


def dual_norm_bound(z, w, psi, lam, kind) -> float:
    """Upper bound ``2 psi ||z - lam 1||_*`` on the span of a ball."""
    z = np.asarray(z, dtype=float)
    return 2.0 * float(psi) * dual_norm(z - lam, w, kind)


def in_ball(p, ball: BallSpec, slack: float = FEASIBILITY_SLACK) -> bool:
    """Whether ``p`` is a distribution inside ``ball`` up to ``slack``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < -slack) or abs(p.sum() - 1.0) > slack:
        return False
    return weighted_norm(p - ball.nominal, ball.weights, ball.kind) <= ball.budget + slack
