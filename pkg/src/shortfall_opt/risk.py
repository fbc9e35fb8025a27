"""Shortfall and entropic risk on discrete wealth laws, and the feasible risk-budget interval."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, Infeasible, NoBracket
from .numerics import TIGHT, RootConfig, find_root, lognormal_rule
from .preferences import LossFn, UtilityFn

DEGENERATE_TOL = 1e-10
# r_min comes out of quadrature; budgets within roundoff of it count as feasible
FEASIBILITY_SLACK = 1e-12


@dataclass(frozen=True)
class WealthDistribution:
    """Finite law of terminal wealth: nonnegative atoms with positive weights summing to one."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape or v.size == 0:
            raise ValueError("values and weights must be nonempty and of equal length")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("wealth atoms must be finite and >= 0")
        if np.any(~(w > 0)):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, atoms) -> WealthDistribution:
        atoms = list(atoms)
        return cls(np.array([a[0] for a in atoms]), np.array([a[1] for a in atoms]))

    @classmethod
    def constant(cls, c: float) -> WealthDistribution:
        return cls(np.array([float(c)]), np.array([1.0]))

    @classmethod
    def uniform(cls, samples) -> WealthDistribution:
        s = np.asarray(samples, dtype=float).ravel()
        return cls(s, np.full(s.size, 1.0 / s.size))

    def shift(self, m: float) -> WealthDistribution:
        return WealthDistribution(self.values + m, self.weights)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value", "weight"])
        for v, w in zip(self.values, self.weights):
            writer.writerow([repr(float(v)), repr(float(w))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> WealthDistribution:
        text = Path(source).read_text() if not str(source).lstrip().startswith("value") else str(source)
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or set(rows[0]) != {"value", "weight"}:
            raise ValueError("distribution CSV needs exactly the columns value,weight")
        return cls(np.array([float(r["value"]) for r in rows]), np.array([float(r["weight"]) for r in rows]))


def _mean_loss(values, weights, l: LossFn) -> float:
    return float(np.dot(weights, l.extended(-values)))


def expected_loss(dist: WealthDistribution, l: LossFn) -> float:
    """E[L(-X)]; a zero atom is charged L(0-) when that limit is finite."""
    v = dist.values
    if np.any(v == 0) and not math.isfinite(l.value_at_zero):
        raise DomainError(f"{l.family} loss is unbounded at 0- and the law has a zero atom")
    losses = np.where(v > 0, l.extended(-np.where(v > 0, v, 1.0)), l.value_at_zero)
    return float(np.dot(dist.weights, losses))


def shortfall_risk(dist: WealthDistribution, l: LossFn, x1: float, cfg: RootConfig = TIGHT) -> float:
    """inf{m : E[L(-X - m)] <= x1}.

    ``m -> E[L(-X - m)]`` is strictly decreasing, so the infimum is the root
    of ``E[L(-X - m)] - x1``.  The loss is used on the whole line (its
    natural extension, or +inf beyond a pole at 0).
    """
    if not x1 > 0:
        raise Infeasible("x1 must be positive for a positive-valued loss")
    v, w = dist.values, dist.weights

    def excess(m):
        return _mean_loss(v + m, w, l) - x1

    lo, hi = -float(v.max()) - 1.0, -float(v.min()) + 1.0
    try:
        return find_root(excess, lo, hi, cfg)
    except NoBracket as exc:
        raise Infeasible(f"E[L(-X-m)] stays above x1={x1} for every m tried") from exc


def entropic_risk(dist: WealthDistribution, gamma: float, x1: float) -> float:
    """(1/gamma) (ln E[exp(-gamma X)] - ln x1), via log-sum-exp."""
    if not (gamma > 0 and x1 > 0):
        raise ValueError("gamma and x1 must be positive")
    lse = logsumexp(-gamma * dist.values, b=dist.weights)
    return float((lse - math.log(x1)) / gamma)


# ---------------------------------------------------------------------------
# feasibility interval


@dataclass(frozen=True)
class FeasibilityInterval:
    r_min: float
    r_max: float
    x1: float
    status: str

    def to_dict(self):
        return {"r_min": self.r_min, "r_max": self.r_max, "x1": self.x1, "status": self.status}


def classify_budget(r_min: float, r_max: float, x1: float) -> str:
    if x1 < r_min - FEASIBILITY_SLACK * max(1.0, abs(r_min)):
        return "infeasible"
    if abs(r_max - r_min) <= DEGENERATE_TOL:
        return "degenerate"
    if x1 >= r_max:
        return "non_binding"
    return "binding"


def unconstrained_multiplier(u: UtilityFn, n, w, x: float, cfg: RootConfig = TIGHT) -> float:
    """y0 with E[N I(y0 N)] = x on a discrete law of N."""
    s = find_root(lambda s: float(np.dot(w, n * u.inverse_marginal(math.exp(s) * n))) - x, -1.0, 1.0, cfg)
    return math.exp(s)


def loss_minimizer(l: LossFn, n, w, x: float, cfg: RootConfig = TIGHT):
    """Budget-feasible X >= 0 minimising E[L(-X)] subject to E[N X] = x.

    First-order condition ``L'(-X) = c N``, i.e. ``X = -(L')^{-1}(c N)``,
    set to zero wherever ``c N`` reaches ``L'(0-)``.  Returns ``(c, X)``.
    """
    def wealth(c):
        return -l.inverse_marginal(c * n)

    s = find_root(lambda s: float(np.dot(w, n * wealth(math.exp(s)))) - x, -1.0, 1.0, cfg)
    c = math.exp(s)
    return c, wealth(c)


def _lognormal_loss_minimum(l: LossFn, m: float, x: float, order: int, cfg: RootConfig = TIGHT) -> float:
    """min E[L(-X)] over X >= 0 with E[N X] = x, N lognormal with log-variance m.

    The minimiser ``-(L')^{-1}(c N)`` hits zero at ``N = L'(0-)/c``; the
    expectation is split there so no quadrature rule straddles the kink.
    """
    if m == 0.0 or not math.isfinite(l.marginal_at_zero):
        n, w = lognormal_rule(m, order)
        _, x_min = loss_minimizer(l, n, w, x, cfg)
        return float(np.dot(w, np.where(x_min > 0, l.extended(-np.maximum(x_min, 1e-300)), l.value_at_zero)))

    def pieces(c):
        kink = l.marginal_at_zero / c
        n, w = lognormal_rule(m, order, (0.0, kink))
        _, w_out = lognormal_rule(m, order, (kink, math.inf))
        return n, w, float(w_out.sum()), -l.inverse_marginal(np.minimum(c * n, l.marginal_at_zero))

    def budget(s):
        n, w, _, x_c = pieces(math.exp(s))
        return float(np.dot(w, n * x_c)) - x

    n, w, p_out, x_c = pieces(math.exp(find_root(budget, -1.0, 1.0, cfg)))
    inside = np.where(x_c > 0, l.extended(-np.maximum(x_c, 1e-300)), l.value_at_zero)
    return float(np.dot(w, inside)) + p_out * l.value_at_zero


def feasible_interval(model, u: UtilityFn, l: LossFn, x: float, x1: float, order: int = 64) -> FeasibilityInterval:
    """[r_min, r_max] for a complete Black-Scholes model and the status of ``x1``.

    ``model`` only needs ``cumulative_variance(t)``.  ``r_max`` is the
    expected loss of the unconstrained optimum ``I(y0 N_T)``; ``r_min`` the
    smallest expected loss any budget-feasible wealth can reach.
    """
    m = model.cumulative_variance(0.0)
    n, w = lognormal_rule(m, order)
    y0 = unconstrained_multiplier(u, n, w, x)
    x_opt = u.inverse_marginal(y0 * n)
    r_max = float(np.dot(w, l.extended(-x_opt)))
    r_min = min(_lognormal_loss_minimum(l, m, x, order), r_max)
    return FeasibilityInterval(r_min, r_max, float(x1), classify_budget(r_min, r_max, x1))
