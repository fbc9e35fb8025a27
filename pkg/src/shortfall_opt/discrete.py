"""One-period finite-state markets: martingale measures, dual values and brute-force primal checks.

In one period every dual process is ``y dQ/dP`` for an equivalent
martingale measure ``Q``, so the incomplete-market duality can be checked
exactly.  Measures are parameterised affinely, ``q(t) = q0 + D t``, with
``D`` spanning the null space of the martingale system.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .errors import ArbitrageDetected, BoundaryWarning, Infeasible, NoBracket
from .numerics import DEFAULT, TIGHT, RootConfig, find_root, nested_solve
from .preferences import LagrangianUtility, LossFn, UtilityFn
from .risk import FeasibilityInterval, classify_budget

BOUNDARY_TOL = 1e-8


@dataclass(frozen=True)
class DiscreteMarket:
    probs: np.ndarray
    payoffs: np.ndarray
    spot: np.ndarray
    x: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        pay = np.asarray(self.payoffs, dtype=float)
        if pay.ndim == 1:
            pay = pay[:, None]
        spot = np.asarray(self.spot, dtype=float).ravel()
        if np.any(~(p > 0)) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be positive and sum to 1")
        if pay.shape != (p.size, spot.size):
            raise ValueError(f"payoffs must have shape ({p.size}, {spot.size})")
        if np.any(~(spot > 0)):
            raise ValueError("spot prices must be positive")
        if not self.x > 0:
            raise ValueError("initial capital must be positive")
        for name, val in (("probs", p), ("payoffs", pay), ("spot", spot)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "x", float(self.x))

    @property
    def n_states(self) -> int:
        return self.probs.size

    @property
    def n_assets(self) -> int:
        return self.spot.size

    @property
    def gains(self) -> np.ndarray:
        """Price change per unit held, state by asset."""
        return self.payoffs - self.spot[None, :]

    def wealth(self, h, x: float | None = None) -> np.ndarray:
        """Terminal wealth of holding ``h`` (shape (n,) or (k, n)); rows are states."""
        x = self.x if x is None else x
        return x + np.asarray(h, dtype=float) @ self.gains.T

    def to_dict(self) -> dict[str, Any]:
        return {"probs": self.probs.tolist(), "payoffs": self.payoffs.tolist(), "spot": self.spot.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any], x: float = 1.0) -> DiscreteMarket:
        return cls(d["probs"], d["payoffs"], d["spot"], x)


@dataclass(frozen=True)
class MeasureSet:
    base: np.ndarray
    directions: np.ndarray   # (n_states, k)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def measure(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(self.dim)
        return self.base + self.directions @ t

    def contains(self, t) -> bool:
        return bool(np.all(self.measure(t) > 0))

    def line_bounds(self, t, v) -> tuple[float, float]:
        """Open interval of s with q(t + s v) > 0."""
        q = self.measure(t)
        dv = self.directions @ np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            ratio = -q / dv
        lo = np.max(ratio[dv > 0], initial=-math.inf)
        hi = np.min(ratio[dv < 0], initial=math.inf)
        return float(lo), float(hi)

    def vertices_1d(self) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint measures of a one-dimensional family."""
        if self.dim != 1:
            raise ValueError("only defined for a one-parameter family")
        lo, hi = self.line_bounds(np.zeros(1), np.ones(1))
        return self.measure([lo]), self.measure([hi])


def _martingale_system(market: DiscreteMarket):
    a = np.vstack([np.ones(market.n_states), market.payoffs.T])
    b = np.concatenate([[1.0], market.spot])
    return a, b


def emm_set(market: DiscreteMarket) -> MeasureSet:
    """All strictly positive solutions of ``sum q = 1, q' payoffs = spot``.

    The base point maximises the smallest coordinate (a linear program), so
    it sits well inside the positive orthant.
    """
    a, b = _martingale_system(market)
    s = market.n_states
    # variables (q, s_min); maximise s_min subject to q_i >= s_min
    c = np.zeros(s + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-np.eye(s), np.ones((s, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(s), A_eq=np.hstack([a, np.zeros((a.shape[0], 1))]), b_eq=b,
                  bounds=[(0, 1)] * s + [(0, 1)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-12:
        raise ArbitrageDetected("no strictly positive martingale measure exists")
    q0 = res.x[:s]
    q0 = q0 + np.linalg.lstsq(a, b - a @ q0, rcond=None)[0]  # polish the equality residual
    d = null_space(a)
    return MeasureSet(q0, d)


# ---------------------------------------------------------------------------
# dual side


def _dual_objective(market, lag, y, q):
    return float(np.dot(market.probs, lag.conjugate(y * q / market.probs)))


def _minimise_line(market, lag, y, ms, t, v, cfg):
    """Minimise the dual along ``t + s v`` by the root of its directional derivative.

    The derivative ``-y sum_i (D v)_i H(y q_i/p_i)`` increases in ``s`` and
    runs from -inf to +inf across the open segment because H(0+) = inf.
    """
    lo, hi = ms.line_bounds(t, v)
    dv = ms.directions @ v
    p = market.probs

    def slope(s):
        q = ms.measure(t + s * v)
        return -y * float(np.dot(dv, lag.h(y * q / p)))

    span = hi - lo
    a, b = lo + 1e-13 * span, hi - 1e-13 * span
    sa, sb = slope(a), slope(b)
    if sa >= 0:
        return a, True
    if sb <= 0:
        return b, True
    s = find_root(slope, a, b, cfg, expand=False)
    return s, False


def dual_value_z(market: DiscreteMarket, lag: LagrangianUtility, y: float, cfg: RootConfig = TIGHT,
                 ms: MeasureSet | None = None):
    """min over martingale measures q of ``sum_i p_i Z(y q_i / p_i)``; returns ``(value, q*)``.

    One-parameter families are solved by a single line search; higher
    dimensions cycle through coordinate directions until the point settles.
    """
    if not y > 0:
        raise ValueError("y must be positive")
    ms = emm_set(market) if ms is None else ms
    t = np.zeros(ms.dim)
    on_boundary = False
    if ms.dim:
        for sweep in range(200):
            t_old = t.copy()
            for j in range(ms.dim):
                v = np.zeros(ms.dim)
                v[j] = 1.0
                s, on_boundary = _minimise_line(market, lag, y, ms, t, v, cfg)
                t = t + s * v
            if ms.dim == 1 or np.max(np.abs(t - t_old)) <= 1e-14 * max(1.0, np.max(np.abs(t))):
                break
    q = ms.measure(t)
    if on_boundary or q.min() <= BOUNDARY_TOL:
        warnings.warn(f"dual minimiser is within {BOUNDARY_TOL:g} of the positivity boundary",
                      BoundaryWarning, stacklevel=2)
    return _dual_objective(market, lag, y, q), q


@dataclass
class LagrangianSolution:
    wealth: np.ndarray
    w_lambda: float
    y: float
    q: np.ndarray
    position: np.ndarray


def _position(market, wealth, x):
    h = np.linalg.lstsq(market.gains, wealth - x, rcond=None)[0]
    return h


def _budget_root(market, lag, x, ms, cfg):
    cache = {}

    def wealth_at(s):
        if s not in cache:
            y = math.exp(s)
            _, q = dual_value_z(market, lag, y, cfg, ms)
            cache[s] = (q, lag.h(y * q / market.probs))
        return cache[s]

    def budget(s):
        q, w = wealth_at(s)
        return float(np.dot(q, w)) - x

    s = find_root(budget, -1.0, 1.0, cfg)
    q, w = wealth_at(s)
    return math.exp(s), q, w


def primal_lagrangian(market: DiscreteMarket, lag: LagrangianUtility, x: float | None = None,
                      cfg: RootConfig = TIGHT) -> LagrangianSolution:
    """Optimal terminal wealth for utility W_lam: X_i = H_lam(y q*_i / p_i) with the budget binding.

    At the dual minimiser X is orthogonal to every direction of the measure
    family, so its price is the same under all martingale measures and it is
    attainable by trading; the position is recovered by least squares.
    """
    x = market.x if x is None else float(x)
    ms = emm_set(market)
    y, q, w = _budget_root(market, lag, x, ms, cfg)
    return LagrangianSolution(w, float(np.dot(market.probs, lag.value(w))), y, q, _position(market, w, x))


@dataclass
class ConstrainedSolution:
    wealth: np.ndarray
    u_value: float
    lambda_star: float
    y: float
    q: np.ndarray
    position: np.ndarray
    feasibility: FeasibilityInterval
    risk: float
    w_value: float
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "wealth": self.wealth.tolist(), "u": self.u_value, "lambda_star": self.lambda_star, "y": self.y,
            "q": self.q.tolist(), "position": self.position.tolist(), "risk": self.risk,
            "w_lambda": self.w_value, "feasibility": self.feasibility.to_dict(), "note": self.note,
        }


def solve_constrained(market: DiscreteMarket, u: UtilityFn, l: LossFn, x: float | None = None,
                      x1: float = math.nan, cfg: RootConfig = DEFAULT, feasibility: FeasibilityInterval | None = None
                      ) -> ConstrainedSolution:
    """Maximise E[U(X)] subject to E[L(-X)] <= x1 through the two multipliers (y, lambda)."""
    x = market.x if x is None else float(x)
    if feasibility is None:
        r_min, r_max = risk_interval(market, u, l, x)
        feasibility = FeasibilityInterval(r_min, r_max, float(x1), classify_budget(r_min, r_max, x1))
    if feasibility.status == "infeasible":
        raise Infeasible(f"infeasible: x1 < r_min ({x1!r} < {feasibility.r_min!r})")
    ms = emm_set(market)
    p = market.probs
    memo = {}

    def state(y, lam):
        key = (y, lam)
        if key not in memo:
            lag = LagrangianUtility(u, l, lam)
            _, q = dual_value_z(market, lag, y, TIGHT, ms)
            memo[key] = (q, lag.h(y * q / p))
        return memo[key]

    def budget(y, lam):
        q, w = state(y, lam)
        return float(np.dot(q, w)) - x

    def risk(y, lam):
        _, w = state(y, lam)
        return float(np.dot(p, l.value(-w))) - x1

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = nested_solve(budget, risk, cfg)
    note = sol.note or (str(caught[0].message) if caught else "")
    q, w = state(sol.y, sol.lam)
    lag = LagrangianUtility(u, l, sol.lam)
    return ConstrainedSolution(
        wealth=w, u_value=float(np.dot(p, u.value(w))), lambda_star=sol.lam, y=sol.y, q=q,
        position=_position(market, w, x), feasibility=feasibility, risk=float(np.dot(p, l.value(-w))),
        w_value=float(np.dot(p, lag.value(w))), note=note,
    )


# ---------------------------------------------------------------------------
# brute force over trading positions


def position_box(market: DiscreteMarket, x: float | None = None) -> np.ndarray:
    """Bounding box (n, 2) of positions keeping terminal wealth nonnegative."""
    x = market.x if x is None else float(x)
    n = market.n_assets
    box = np.empty((n, 2))
    for j in range(n):
        for k, sign in enumerate((1.0, -1.0)):
            c = np.zeros(n)
            c[j] = sign
            res = linprog(c, A_ub=-market.gains, b_ub=np.full(market.n_states, x), bounds=[(None, None)] * n,
                          method="highs")
            if res.status != 0:
                raise ArbitrageDetected("admissible positions are unbounded")
            box[j, k] = sign * res.fun
    return box


def _grid_search(objective, box, points, passes):
    """Maximise ``objective`` (vectorised over rows of positions) on shrinking grids."""
    n = box.shape[0]
    lo, hi = box[:, 0].copy(), box[:, 1].copy()
    best_h, best_v = None, -math.inf
    for _ in range(passes + 1):
        axes = [np.linspace(lo[j], hi[j], points) for j in range(n)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = objective(mesh)
        i = int(np.argmax(vals))
        if vals[i] > best_v:
            best_v, best_h = float(vals[i]), mesh[i]
        step = (hi - lo) / (points - 1)
        lo = np.maximum(best_h - step, box[:, 0])
        hi = np.minimum(best_h + step, box[:, 1])
    return best_h, best_v


def _grid_shape(n: int):
    if n == 1:
        return 2001, 2
    if n == 2:
        return 201, 8
    raise ValueError("brute force supports at most two assets")


def _expected(market, fn, h, x):
    w = market.wealth(h, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(w > 0, fn(np.where(w > 0, w, 1.0)), np.nan)
    out = vals @ market.probs
    return np.where(np.all(w > 0, axis=1), out, np.nan)


def brute_force_primal(market: DiscreteMarket, fn, x: float | None = None, constraint=None):
    """max over positions of E[fn(X)], optionally subject to ``constraint(h) <= 0``.

    ``fn`` maps positive wealth arrays to values.  Returns ``(h, value)``.
    """
    x = market.x if x is None else float(x)
    box = position_box(market, x)
    points, passes = _grid_shape(market.n_assets)

    def objective(h):
        v = _expected(market, fn, h, x)
        if constraint is not None:
            v = np.where(constraint(h) <= 0, v, np.nan)
        return np.where(np.isnan(v), -np.inf, v)

    h, v = _grid_search(objective, box, points, passes)
    if not math.isfinite(v):
        raise Infeasible("no admissible position satisfies the constraint")
    return h, v


def brute_force_risk_interval(market: DiscreteMarket, u: UtilityFn, l: LossFn, x: float | None = None):
    """(r_min, r_max) by grid search: smallest attainable loss, and the loss of the utility maximiser."""
    x = market.x if x is None else float(x)
    h_u, _ = brute_force_primal(market, u.value, x)
    r_max = float(np.dot(market.probs, l.value(-market.wealth(h_u, x))))
    box = position_box(market, x)
    points, passes = _grid_shape(market.n_assets)
    def neg_risk(h):
        w = market.wealth(h, x)
        losses = l.extended(-np.maximum(w, 0.0)) if math.isfinite(l.value_at_zero) else l.extended(-w)
        return -(losses @ market.probs)
    _, v = _grid_search(neg_risk, box, points, passes)
    return min(-v, r_max), r_max


def risk_interval(market: DiscreteMarket, u: UtilityFn, l: LossFn, x: float | None = None):
    """(r_min, r_max): r_max from the exact unconstrained optimum, r_min by grid search."""
    x = market.x if x is None else float(x)
    free = primal_lagrangian(market, LagrangianUtility(u, l, 0.0), x)
    r_max = float(np.dot(market.probs, l.value(-free.wealth)))
    r_min, _ = brute_force_risk_interval(market, u, l, x)
    return min(r_min, r_max), r_max


def brute_force_constrained(market, u: UtilityFn, l: LossFn, x1: float, x: float | None = None):
    """Grid maximum of E[U(X)] over positions with E[L(-X)] <= x1; returns ``(h, u)``."""
    x = market.x if x is None else float(x)

    def excess(h):
        w = market.wealth(h, x)
        with np.errstate(invalid="ignore"):
            return l.extended(-np.where(w > 0, w, 0.0)) @ market.probs - x1

    return brute_force_primal(market, u.value, x, excess)


# ---------------------------------------------------------------------------
# bi-dual verification


@dataclass
class Check:
    name: str
    passed: bool
    error: float
    tolerance: float

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "error": self.error, "tolerance": self.tolerance}


@dataclass
class BidualReport:
    solution: ConstrainedSolution
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "solution": self.solution.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def dual_bound(market, u, l, lam, x1, x, y, ms=None) -> float:
    """z_lam(y) + lam x1 + x y, an upper bound for u(x) for every y > 0."""
    lag = LagrangianUtility(u, l, lam)
    z, _ = dual_value_z(market, lag, y, TIGHT, ms)
    return z + lam * x1 + x * y


def verify_bidual(market: DiscreteMarket, u: UtilityFn, l: LossFn, x: float | None = None, x1: float = math.nan,
                  tol: float = 1e-6, n_y: int = 41, n_x: int = 7) -> BidualReport:
    """Check u = w_lam* + lam* x1, u = min_y {z_lam*(y) + lam* x1 + x y}, and concavity of u in x."""
    x = market.x if x is None else float(x)
    sol = solve_constrained(market, u, l, x, x1)
    report = BidualReport(sol)
    lam = sol.lambda_star

    err = abs(sol.u_value - (sol.w_value + lam * x1))
    report.checks.append(Check("u_equals_w_plus_lambda_x1", err <= tol, err, tol))

    # fine y-grid around the optimum plus the optimum itself; the bound is convex in y
    ms = emm_set(market)
    ys = np.unique(np.concatenate([sol.y * np.geomspace(0.5, 2.0, n_y), [sol.y]]))
    bounds = np.array([dual_bound(market, u, l, lam, x1, x, float(yv), ms) for yv in ys])
    err = abs(bounds.min() - sol.u_value)
    below = float(np.max(sol.u_value - bounds))
    report.checks.append(Check("u_equals_min_dual_bound", err <= tol and below <= tol, max(err, below), tol))

    # concavity of x -> u(x) at fixed x1 over budgets that stay feasible
    xs = x * np.linspace(1.0, 1.3, n_x)
    us = []
    for xv in xs:
        try:
            us.append(solve_constrained(market, u, l, float(xv), x1).u_value)
        except Infeasible:
            us.append(math.nan)
    us = np.array(us)
    second = us[:-2] - 2.0 * us[1:-1] + us[2:]
    worst = float(np.nanmax(second)) if np.isfinite(second).any() else math.nan
    report.checks.append(Check("u_concave_in_x", bool(worst <= tol), worst, tol))
    return report


def market_from_json(text: str, x: float = 1.0) -> DiscreteMarket:
    return DiscreteMarket.from_dict(json.loads(text), x)
