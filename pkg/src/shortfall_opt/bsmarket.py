"""Complete Black-Scholes market: density, dual solve, terminal law, explicit wealth and hedge.

Conventions
-----------
All prices are discounted.  On each grid cell the coefficients are constant;
the market price of risk is ``theta = sigma^{-1} (mu - r)`` and

    m(t) = int_t^T |theta_s|^2 ds,   a = -m/2,   b = -sqrt(m),

so that ``N_T / N_t = exp(a + b Z)`` with ``Z`` standard normal.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, Infeasible, NonMonotoneWarning
from .numerics import DEFAULT, find_root, lognormal_rule, nested_solve
from .preferences import LagrangianUtility, LossFn, UtilityFn
from .risk import FeasibilityInterval, feasible_interval

COND_MAX = 1e12
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


@dataclass(frozen=True)
class MarketModel:
    T: float
    grid: np.ndarray
    r: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    s0: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        r = np.asarray(self.r, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        k = grid.size - 1
        if k < 1 or grid[0] != 0.0 or not math.isclose(grid[-1], self.T, rel_tol=0, abs_tol=1e-14):
            raise ValueError("grid must run from 0 to T")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if mu.ndim == 1:
            mu = mu.reshape(k, -1)
        n = mu.shape[1]
        if sigma.ndim == 2 and n == 1:
            sigma = sigma.reshape(k, 1, 1)
        if r.shape != (k,) or mu.shape != (k, n) or sigma.shape != (k, n, n):
            raise ValueError(f"coefficient shapes must be r:({k},) mu:({k},{n}) sigma:({k},{n},{n})")
        s0 = np.ones(n) if self.s0 is None else np.asarray(self.s0, dtype=float).reshape(n)
        if np.any(~(s0 > 0)):
            raise ValueError("initial prices must be positive")
        for i, s in enumerate(sigma):
            c = np.linalg.cond(s @ s.T)
            if not c <= COND_MAX:
                raise DomainError(f"sigma sigma' on cell {i} has condition number {c:.3g} > {COND_MAX:g}")
        theta = np.linalg.solve(sigma, (mu - r[:, None])[..., None])[..., 0]
        if not np.all(np.isfinite(theta)):
            raise DomainError("market price of risk is not finite")
        for name, val in (("grid", grid), ("r", r), ("mu", mu), ("sigma", sigma), ("s0", s0)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def constant(cls, mu, sigma, r=0.0, T=1.0, n_cells=1, s0=None) -> MarketModel:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        grid = np.linspace(0.0, T, n_cells + 1)
        return cls(T, grid, np.full(n_cells, r), np.tile(mu, (n_cells, 1)),
                   np.tile(sigma, (n_cells, 1, 1)), s0)

    @property
    def n_assets(self) -> int:
        return self.mu.shape[1]

    @property
    def n_cells(self) -> int:
        return self.grid.size - 1

    def cell(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.n_cells - 1))

    def theta_at(self, t: float) -> np.ndarray:
        return self.theta[self.cell(t)]

    def cumulative_variance(self, t: float) -> float:
        """m(t) = int_t^T |theta|^2, summed exactly over cells."""
        if not 0.0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, T]")
        left = np.maximum(self.grid[:-1], t)
        length = np.clip(self.grid[1:] - left, 0.0, None)
        return float(np.dot(length, np.sum(self.theta**2, axis=1)))

    def condition_numbers(self) -> list[float]:
        return [float(np.linalg.cond(s @ s.T)) for s in self.sigma]

    def to_dict(self) -> dict[str, Any]:
        return {
            "T": self.T, "grid": self.grid.tolist(), "r": self.r.tolist(), "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(), "s0": self.s0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MarketModel:
        return cls(d["T"], d["grid"], d["r"], d["mu"], d["sigma"], d.get("s0"))


def density_terminal(model: MarketModel, t: float, z):
    """N_T / N_t as a function of the standard-normal driver ``z``."""
    m = model.cumulative_variance(t)
    return np.exp(-0.5 * m - math.sqrt(m) * np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# dual solve


def _truncation(tr) -> tuple[float, float]:
    if tr is None:
        return 0.0, math.inf
    lo, hi = tr
    lo = 0.0 if lo is None else float(lo)
    hi = math.inf if hi is None else float(hi)
    if not 0.0 <= lo <= hi:
        raise ValueError("truncation needs 0 <= theta <= zeta")
    return lo, hi


def _inside_probability(m: float, tr) -> float:
    lo, hi = tr
    if m == 0.0:
        return float(lo < 1.0 < hi)
    s = math.sqrt(m)
    # N < hi  <=>  Z > (-ln hi - m/2)/s
    p_below_hi = 1.0 if math.isinf(hi) else float(ndtr((math.log(hi) + 0.5 * m) / s))
    p_below_lo = 0.0 if lo <= 0.0 else float(ndtr((math.log(lo) + 0.5 * m) / s))
    return max(p_below_hi - p_below_lo, 0.0)


class _Expectations:
    """Quadrature evaluation of the budget and risk functionals at time 0."""

    def __init__(self, model: MarketModel, u: UtilityFn, l: LossFn, truncation, order: int):
        self.m = model.cumulative_variance(0.0)
        self.tr = truncation
        self.n, self.w = lognormal_rule(self.m, order, truncation)
        self.u, self.l = u, l
        self.outside = max(1.0 - _inside_probability(self.m, truncation), 0.0)
        if self.outside < 1e-15:
            self.outside = 0.0

    def wealth(self, y, lam):
        return LagrangianUtility(self.u, self.l, lam).h(y * self.n)

    def budget(self, y, lam) -> float:
        return float(np.dot(self.w, self.n * self.wealth(y, lam)))

    def risk(self, y, lam) -> float:
        inside = float(np.dot(self.w, self.l.value(-self.wealth(y, lam))))
        if self.outside > 0.0:
            return inside + self.outside * self.l.value_at_zero
        return inside

    def utility(self, y, lam) -> float:
        inside = float(np.dot(self.w, self.u.value(self.wealth(y, lam))))
        return -math.inf if self.outside > 0.0 else inside


def budget_multiplier(model, u, l, x, lam, truncation=None, order=64) -> float:
    """y with E[N_T H_lam(y N_T) 1{theta < N_T < zeta}] = x."""
    ex = _Expectations(model, u, l, _truncation(truncation), order)
    s = find_root(lambda s: ex.budget(math.exp(s), lam) - x, -1.0, 1.0)
    return math.exp(s)


@dataclass
class DualSolution:
    u: UtilityFn
    l: LossFn
    y: float
    lambda_star: float
    x: float
    x1: float
    feasibility: FeasibilityInterval
    residuals: tuple[float, float]
    truncation: tuple[float, float] = (0.0, math.inf)
    value: float = math.nan
    order: int = 64
    note: str = ""

    @property
    def binding(self) -> bool:
        return self.lambda_star > 0

    @property
    def lagrangian(self) -> LagrangianUtility:
        return LagrangianUtility(self.u, self.l, self.lambda_star)

    def to_dict(self) -> dict[str, Any]:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "utility": self.u.to_dict(),
            "loss": self.l.to_dict(),
            "x": self.x,
            "x1": self.x1,
            "y": self.y,
            "lambda_star": self.lambda_star,
            "binding": self.binding,
            "value": num(self.value),
            "feasibility": {k: num(v) if isinstance(v, float) else v for k, v in self.feasibility.to_dict().items()},
            "residuals": {"budget": self.residuals[0], "risk": num(self.residuals[1])},
            "truncation": [self.truncation[0], num(self.truncation[1])],
            "quadrature_order": self.order,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def solve_dual(model: MarketModel, u: UtilityFn, l: LossFn, x: float, x1: float,
               truncation=None, lam: float | None = None, order: int = 64, cfg=DEFAULT) -> DualSolution:
    """Budget multiplier ``y`` and risk multiplier ``lambda*`` for the complete market.

    With ``lam`` given only the budget is solved.  Otherwise the pair is found
    by :func:`nested_solve`; a flat risk residual (the degenerate case where
    minimising loss and maximising utility coincide) is recorded in ``note``
    instead of being raised.
    """
    if not x > 0:
        raise ValueError("initial capital must be positive")
    tr = _truncation(truncation)
    feas = feasible_interval(model, u, l, x, x1, order)
    ex = _Expectations(model, u, l, tr, order)
    note = ""
    if lam is not None:
        y = budget_multiplier(model, u, l, x, lam, tr, order)
        lam_star = float(lam)
    else:
        if feas.status == "infeasible":
            raise Infeasible(f"infeasible: x1 < r_min ({x1!r} < {feas.r_min!r})")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonMonotoneWarning)
            sol = nested_solve(lambda y, lm: ex.budget(y, lm) - x, lambda y, lm: ex.risk(y, lm) - x1, cfg)
        y, lam_star = sol.y, sol.lam
        note = sol.note
        if feas.status == "degenerate":
            note = "degenerate: r_min == r_max; " + note
        if caught and not note:
            note = str(caught[0].message)
    res = (ex.budget(y, lam_star) - x, ex.risk(y, lam_star) - x1)
    return DualSolution(u, l, y, lam_star, float(x), float(x1), feas, res, tr,
                        ex.utility(y, lam_star), order, note)


def optimal_terminal_wealth(sol: DualSolution, n_T):
    """X(T) = H_lam*(y N_T) on {theta < N_T < zeta}, zero elsewhere."""
    n = np.asarray(n_T, dtype=float)
    lo, hi = sol.truncation
    inside = (n > lo) & (n < hi)
    safe = np.where(inside, n, 1.0)
    return np.where(inside, sol.lagrangian.h(sol.y * safe), 0.0)


def terminal_cdf(sol: DualSolution, model: MarketModel, a):
    """P(X(T) <= a) for an untruncated solution.

    X(T) is decreasing in N_T, so ``X(T) <= a`` iff ``N_T >= W'(a)/y``.
    """
    if sol.truncation != (0.0, math.inf):
        raise ValueError("terminal_cdf needs an untruncated solution")
    a = np.asarray(a, dtype=float)
    m = model.cumulative_variance(0.0)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(sol.y) - np.log(sol.lagrangian.marginal(np.maximum(a, 1e-300)))
    if m == 0.0:
        return np.where(log_ratio >= 0.0, 1.0, 0.0)
    return ndtr((log_ratio - 0.5 * m) / math.sqrt(m))


def sample_terminal_wealth(sol: DualSolution, model: MarketModel, n: int, seed: int):
    rng = np.random.default_rng(seed)
    m = model.cumulative_variance(0.0)
    n_T = np.exp(-0.5 * m - math.sqrt(m) * rng.standard_normal(n))
    return optimal_terminal_wealth(sol, n_T)


# ---------------------------------------------------------------------------
# wealth process and strategy


def is_example_pair(u: UtilityFn, l: LossFn) -> bool:
    return u.family == "shifted_reciprocal" and l.family == "scaled_reciprocal"


def _require_pair(sol: DualSolution):
    if not is_example_pair(sol.u, sol.l):
        raise ValueError("closed-form wealth needs U = c - 1/x and L = -beta/k")


def wealth_process(model: MarketModel, sol: DualSolution, z, t: float, order: int = 64):
    """F(z, t) = E[(N_T/N_t) X(T) | N_t = z] by quadrature; works for any preference pair."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    m = model.cumulative_variance(t)
    lo, hi = sol.truncation
    out = np.empty_like(z)
    for i, zi in enumerate(z):
        ratio, w = lognormal_rule(m, order, (lo / zi, hi / zi))
        out[i] = np.dot(w, ratio * optimal_terminal_wealth(sol, zi * ratio))
    return out


def _d(k, z, a, b):
    with np.errstate(divide="ignore"):
        return (np.log(k / z) - a) / b - 0.5 * b


def _phi_diff(z, a, b, tr):
    """(Phi(d(theta)) - Phi(d(zeta)), phi(d(zeta)) - phi(d(theta))) with the limits at 0 and inf."""
    lo, hi = tr
    if lo > 0:
        d_lo = _d(lo, z, a, b)
        big, dens_lo = ndtr(d_lo), _phi(d_lo)
    else:
        big, dens_lo = np.ones_like(z), np.zeros_like(z)
    if math.isfinite(hi):
        d_hi = _d(hi, z, a, b)
        small, dens_hi = ndtr(d_hi), _phi(d_hi)
    else:
        small, dens_hi = np.zeros_like(z), np.zeros_like(z)
    return big - small, dens_hi - dens_lo


def example_wealth_F(model: MarketModel, sol: DualSolution, z, t: float):
    """Closed-form wealth process for U = c - 1/x, L = -beta/k.

    F(z, t) = K z^{-1/2} exp(a/2 + b^2/8) [Phi(d(theta)) - Phi(d(zeta))],
    K = sqrt((1 + lam beta)/y).  The exponent a/2 + b^2/8 equals -m(t)/8.
    At m(t) = 0 the payoff itself is returned.
    """
    _require_pair(sol)
    z = np.asarray(z, dtype=float)
    m = model.cumulative_variance(t)
    if m == 0.0:
        return optimal_terminal_wealth(sol, z)
    k = math.sqrt((1.0 + sol.lambda_star * sol.l.param) / sol.y)
    a, b = -0.5 * m, -math.sqrt(m)
    diff, _ = _phi_diff(z, a, b, sol.truncation)
    return k * z**-0.5 * math.exp(-m / 8.0) * diff


def example_wealth_Fz(model: MarketModel, sol: DualSolution, z, t: float):
    """Analytic dF/dz of :func:`example_wealth_F`."""
    _require_pair(sol)
    z = np.asarray(z, dtype=float)
    m = model.cumulative_variance(t)
    k = math.sqrt((1.0 + sol.lambda_star * sol.l.param) / sol.y)
    if m == 0.0:
        lo, hi = sol.truncation
        inside = (z > lo) & (z < hi)
        return np.where(inside, -0.5 * k * np.where(inside, z, 1.0) ** -1.5, 0.0)
    a, b = -0.5 * m, -math.sqrt(m)
    diff, dens = _phi_diff(z, a, b, sol.truncation)
    return k * math.exp(-m / 8.0) * (-0.5 * z**-1.5 * diff + z**-0.5 * dens / (z * b))


def example_strategy(model: MarketModel, sol: DualSolution, t: float, n_t, s_t):
    """Number of shares held: pi = -diag(S)^{-1} (sigma')^{-1} theta N F_z(N, t).

    Vectorised over paths: ``n_t`` of shape (P,), ``s_t`` of shape (P, n).
    """
    c = model.cell(t)
    sigma, theta = model.sigma[c], model.theta[c]
    direction = np.linalg.solve(sigma.T, theta)
    n_t = np.asarray(n_t, dtype=float)
    s_t = np.asarray(s_t, dtype=float)
    scale = n_t * example_wealth_Fz(model, sol, n_t, t)
    return -np.multiply.outer(scale, direction) / s_t


# ---------------------------------------------------------------------------
# simulation


@dataclass
class PathSet:
    seed: int
    n_paths: int
    n_steps: int
    t: np.ndarray
    dW: np.ndarray   # (paths, steps, d)
    S: np.ndarray    # (paths, steps + 1, n)
    N: np.ndarray    # (paths, steps + 1)
    X: np.ndarray | None = field(default=None)

    @property
    def B(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.n_steps + 1, self.dW.shape[2]))
        np.cumsum(self.dW, axis=1, out=out[:, 1:])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        d, n = self.dW.shape[2], self.S.shape[2]
        b_cols = ["B"] if d == 1 else [f"B_{j + 1}" for j in range(d)]
        wr.writerow(["path", "step", "t", *b_cols, *[f"S_{j + 1}" for j in range(n)], "N", "X"])
        B = self.B
        X = self.X if self.X is not None else np.full(self.N.shape, math.nan)
        for p in range(self.n_paths):
            for k in range(self.n_steps + 1):
                wr.writerow([p, k, repr(float(self.t[k])), *map(repr, B[p, k].tolist()),
                             *map(repr, self.S[p, k].tolist()), repr(float(self.N[p, k])), repr(float(X[p, k]))])
        return buf.getvalue()


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent stream for one path, derived from (seed, path index) only."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(path,))))


def simulate(model: MarketModel, sol: DualSolution | None, seed: int, n_paths: int, n_steps: int) -> PathSet:
    """Exact lognormal stepping of S and N on a uniform time grid.

    The optimal wealth ``X = F(N_t, t)`` is filled in when ``sol`` is given;
    the closed form is used for the example pair, quadrature otherwise.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("need n_steps >= 1 and n_paths >= 1")
    d = model.n_assets
    t = np.linspace(0.0, model.T, n_steps + 1)
    dt = np.diff(t)
    dW = np.empty((n_paths, n_steps, d))
    for p in range(n_paths):
        dW[p] = path_rng(seed, p).standard_normal((n_steps, d))
    dW *= np.sqrt(dt)[None, :, None]

    cells = np.array([model.cell(tk) for tk in t[:-1]])
    sig = model.sigma[cells]                       # (steps, n, d)
    alpha = model.mu[cells] - model.r[cells][:, None]
    theta = model.theta[cells]                     # (steps, d)
    vol_incr = np.einsum("kij,pkj->pki", sig, dW)
    drift_S = (alpha - 0.5 * np.sum(sig**2, axis=2)) * dt[:, None]
    log_S = np.concatenate([np.zeros((n_paths, 1, d)),
                            np.cumsum(drift_S[None] + vol_incr, axis=1)], axis=1)
    S = model.s0[None, None, :] * np.exp(log_S)
    log_N = -0.5 * np.sum(theta**2, axis=1) * dt - np.einsum("kj,pkj->pk", theta, dW)
    N = np.exp(np.concatenate([np.zeros((n_paths, 1)), np.cumsum(log_N, axis=1)], axis=1))

    X = None
    if sol is not None:
        X = np.empty_like(N)
        for k, tk in enumerate(t):
            if is_example_pair(sol.u, sol.l):
                X[:, k] = example_wealth_F(model, sol, N[:, k], tk)
            else:
                X[:, k] = wealth_process(model, sol, N[:, k], tk, sol.order)
    return PathSet(int(seed), n_paths, n_steps, t, dW, S, N, X)


def hedge_replication_error(model: MarketModel, sol: DualSolution, paths: PathSet) -> np.ndarray:
    """Self-financing Euler wealth minus the optimal terminal wealth, per path."""
    _require_pair(sol)
    wealth = np.full(paths.n_paths, sol.x)
    for k in range(paths.n_steps):
        pi = example_strategy(model, sol, paths.t[k], paths.N[:, k], paths.S[:, k])
        wealth = wealth + np.sum(pi * (paths.S[:, k + 1] - paths.S[:, k]), axis=1)
    return wealth - optimal_terminal_wealth(sol, paths.N[:, -1])


def value_function(model, u, l, x, x1, truncation=None, order=64) -> float:
    """u(x) = E[U(X(T))] at the constrained optimum."""
    return solve_dual(model, u, l, x, x1, truncation, order=order).value
