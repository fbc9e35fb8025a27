"""Root finding, Gaussian quadrature and the two-multiplier solve.

Everything here is deterministic: the same inputs always produce
bit-identical outputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

from .errors import Infeasible, MaxIter, NoBracket, NonMonotoneWarning


@dataclass(frozen=True)
class RootConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_iter: int = 200
    bracket_expansion_cap: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.bracket_expansion_cap < 0:
            raise ValueError("max_iter must be >= 1 and bracket_expansion_cap >= 0")


DEFAULT = RootConfig()
# used internally wherever downstream identities are checked near machine precision
TIGHT = RootConfig(abs_tol=1e-15, rel_tol=1e-15, max_iter=400)


class _Converged(Exception):
    def __init__(self, x):
        self.x = x


def _sign(v: float) -> int:
    if v > 0:
        return 1
    if v < 0:
        return -1
    return 0


def expand_bracket(f, lo: float, hi: float, cap: int = 200):
    """Widen ``[lo, hi]`` until a monotone ``f`` changes sign on it.

    Returns ``(lo, hi, f(lo), f(hi))``.  The direction of expansion is read
    off from the endpoint values, so ``f`` may be increasing or decreasing.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    flo, fhi = f(lo), f(hi)
    for _ in range(cap + 1):
        if _sign(flo) * _sign(fhi) <= 0:
            return lo, hi, flo, fhi
        width = hi - lo
        increasing = fhi > flo
        decreasing = fhi < flo
        # root lies on the side where |f| shrinks
        go_left = (increasing and flo > 0) or (decreasing and flo < 0)
        go_right = (increasing and fhi < 0) or (decreasing and fhi > 0)
        if go_left or not (go_left or go_right):
            lo, flo = lo - width, f(lo - width)
        if go_right or not (go_left or go_right):
            hi, fhi = hi + width, f(hi + width)
    raise NoBracket(f"no sign change after {cap} bracket doublings (last [{lo}, {hi}])")


def find_root(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    cfg: RootConfig = DEFAULT,
    *,
    expand: bool = True,
    method: str = "brent",
) -> float:
    """Root of a continuous monotone scalar function.

    The bracket ``[lo, hi]`` is expanded (doubling its width) until ``f``
    changes sign, then refined with Brent's method or plain bisection.
    Stops as soon as ``|f(x)| <= abs_tol`` or the bracket is narrower than
    ``rel_tol * |x|``.

    Raises
    ------
    NoBracket
        The expansion cap was reached without a sign change.
    MaxIter
        The tolerance was not met within ``max_iter`` iterations.
    """
    if expand:
        lo, hi, flo, fhi = expand_bracket(f, lo, hi, cfg.bracket_expansion_cap)
    else:
        flo, fhi = f(lo), f(hi)
        if _sign(flo) * _sign(fhi) > 0:
            raise NoBracket(f"f has the same sign at {lo} and {hi}")
    if abs(flo) <= cfg.abs_tol:
        return float(lo)
    if abs(fhi) <= cfg.abs_tol:
        return float(hi)

    if method == "bisect":
        return _bisect(f, lo, hi, flo, cfg)
    if method != "brent":
        raise ValueError(f"unknown method {method!r}")

    # brent cannot interpolate through infinite endpoint values
    n_pre = 0
    while not (math.isfinite(flo) and math.isfinite(fhi)):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= cfg.abs_tol:
            return float(mid)
        if _sign(fmid) == _sign(flo):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid
        n_pre += 1
        if n_pre > cfg.max_iter:
            raise MaxIter("could not reach finite function values inside the bracket")

    def wrapped(x):
        v = f(x)
        if abs(v) <= cfg.abs_tol:
            raise _Converged(x)
        return v

    try:
        root = brentq(
            wrapped, lo, hi, xtol=1e-300, rtol=max(cfg.rel_tol, 4 * np.finfo(float).eps),
            maxiter=cfg.max_iter,
        )
    except _Converged as c:
        return float(c.x)
    except RuntimeError as exc:
        raise MaxIter(str(exc)) from exc
    return float(root)


def _bisect(f, lo, hi, flo, cfg):
    s_lo = _sign(flo)
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= cfg.abs_tol or hi - lo <= cfg.rel_tol * abs(mid):
            return float(mid)
        if mid in (lo, hi):
            return float(mid)
        if _sign(fmid) == s_lo:
            lo = mid
        else:
            hi = mid
    raise MaxIter(f"bisection did not converge in {cfg.max_iter} iterations")


_EPS = float(np.finfo(float).eps)


def invert_decreasing(
    fn: Callable[[np.ndarray], np.ndarray],
    target,
    lo: float = 1e-12,
    hi: float = 1.0,
    cap: int = 200,
    dfn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Vectorised solve of ``fn(x) = target`` for strictly decreasing positive ``fn`` on (0, inf).

    Each element gets its own bracket, starting from ``[lo, hi]`` (scalars or
    arrays matching ``target``) with the
    upper end doubled (lower end halved) as needed.  Refinement is geometric
    bisection; when the derivative ``dfn`` is supplied, Newton steps on
    ``log fn(exp(s)) = log target`` are taken wherever they stay inside the
    bracket.  Runs until the brackets (or Newton steps) stop moving in
    floating point.
    """
    target = np.asarray(target, dtype=float)
    lo_a = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi_a = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(cap):
        up = fn(hi_a) > target
        if not up.any():
            break
        hi_a = np.where(up, hi_a * 2.0, hi_a)
    else:
        if (fn(hi_a) > target).any():
            raise NoBracket(f"upper bracket not found within {cap} doublings")
    for _ in range(cap):
        down = fn(lo_a) < target
        if not down.any():
            break
        lo_a = np.where(down, lo_a * 0.5, lo_a)
    else:
        if (fn(lo_a) < target).any():
            raise NoBracket(f"lower bracket not found within {cap} halvings")

    if dfn is None:
        for _ in range(400):
            mid = np.sqrt(lo_a) * np.sqrt(hi_a)
            active = (mid > lo_a) & (mid < hi_a)
            if not active.any():
                break
            right = fn(mid) > target
            lo_a = np.where(active & right, mid, lo_a)
            hi_a = np.where(active & ~right, mid, hi_a)
        return np.sqrt(lo_a) * np.sqrt(hi_a)

    log_t = np.log(target)
    x = np.sqrt(lo_a) * np.sqrt(hi_a)
    done = np.zeros(target.shape, dtype=bool)
    for _ in range(400):
        fx = fn(x)
        g = np.log(fx) - log_t
        lo_a = np.where(g > 0, x, lo_a)
        hi_a = np.where(g < 0, x, hi_a)
        slope = x * dfn(x) / fx
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = x * np.exp(-g / slope)
        ok = np.isfinite(newton) & (newton >= lo_a) & (newton <= hi_a)
        x_new = np.where(ok, newton, np.sqrt(lo_a) * np.sqrt(hi_a))
        settled = (np.abs(g) <= 4.0 * _EPS) | (hi_a <= lo_a * (1.0 + 4.0 * _EPS))
        x_new = np.where(done | settled, x, x_new)
        done = done | settled | (np.abs(x_new - x) <= 4.0 * _EPS * x)
        x = x_new
        if done.all():
            break
    return x


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights with ``sum(w * f(z)) ~ E[f(Z)]`` for standard normal Z."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, fn) -> float:
        return float(np.dot(self.weights, fn(self.nodes)))


_GH_CACHE: dict[int, QuadratureRule] = {}


def gauss_hermite(order: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule of the given order (1..256)."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= 256:
        raise ValueError(f"quadrature order must be an integer in [1, 256], got {order!r}")
    order = int(order)
    rule = _GH_CACHE.get(order)
    if rule is None:
        z, w = hermegauss(order)
        z = 0.5 * (z - z[::-1])
        w = 0.5 * (w + w[::-1])
        w = w / w.sum()
        z.setflags(write=False)
        w.setflags(write=False)
        rule = _GH_CACHE[order] = QuadratureRule(z, w, order)
    return rule


_Z_CLIP = 12.0


def lognormal_rule(m: float, order: int = 64, truncation=(0.0, math.inf)):
    """Quadrature for ``E[f(N) 1{lo < N < hi}]`` with ``N = exp(-m/2 - sqrt(m) Z)``.

    Returns ``(n_values, weights)``.  Without truncation this is the
    Gauss-Hermite rule mapped through the exponential.  With a truncation
    the indicator becomes a z-interval, integrated by Gauss-Legendre against
    the normal density (Hermite nodes would straddle the discontinuity).
    """
    lo_n, hi_n = truncation
    if hi_n is None:
        hi_n = math.inf
    if m < 0:
        raise ValueError("variance must be nonnegative")
    if m == 0.0:
        inside = lo_n < 1.0 < hi_n
        return np.array([1.0]), np.array([1.0 if inside else 0.0])
    a, b = -0.5 * m, -math.sqrt(m)
    if lo_n <= 0.0 and math.isinf(hi_n):
        rule = gauss_hermite(order)
        return np.exp(a + b * rule.nodes), rule.weights
    # b < 0, so large N corresponds to small z
    z_lo = (math.log(hi_n) - a) / b if math.isfinite(hi_n) else -math.inf
    z_hi = (math.log(lo_n) - a) / b if lo_n > 0.0 else math.inf
    z_lo, z_hi = max(z_lo, -_Z_CLIP), min(z_hi, _Z_CLIP)
    if z_hi <= z_lo:
        return np.array([1.0]), np.array([0.0])
    t, w = leggauss(2 * order)
    half = 0.5 * (z_hi - z_lo)
    z = z_lo + half * (t + 1.0)
    w = w * half * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return np.exp(a + b * z), w


def lognormal_expectation(fn, m: float, order: int = 64, truncation=(0.0, math.inf)) -> float:
    n, w = lognormal_rule(m, order, truncation)
    return float(np.dot(w, fn(n)))


# ---------------------------------------------------------------------------
# nested (y, lambda) solve


@dataclass
class NestedSolution:
    y: float
    lam: float
    budget_residual: float
    risk_residual: float
    monotone: bool = True
    n_roots: int = 1
    note: str = ""
    trace: list = field(default_factory=list, repr=False)


LAMBDA_MAX = 2.0**40
SCAN_POINTS = 128


def nested_solve(budget_residual, risk_residual, cfg: RootConfig = DEFAULT) -> NestedSolution:
    """Find ``(y, lam)`` with both residuals zero, ``lam`` as small as possible.

    For fixed ``lam`` the budget residual is decreasing in ``y``; the inner
    solve runs in ``log y``.  Along the budget-binding curve ``y*(lam)`` the
    risk residual ``g(lam)`` is expected to decrease.  If ``g(0) <= 0`` the
    constraint is slack and ``lam = 0`` is returned.  Otherwise ``lam`` is
    bracketed by doubling and refined; every evaluated point is checked for
    a consistent sign pattern.  When that check fails, or no bracket is found
    below ``2**40``, ``g`` is scanned on a 128-point geometric grid and the
    smallest sign change is used (with a :class:`NonMonotoneWarning` when
    there is more than one).
    """
    y_cache: dict[float, float] = {}

    def y_of(lam: float) -> float:
        if lam not in y_cache:
            s = find_root(lambda s: budget_residual(math.exp(s), lam), -1.0, 1.0, cfg)
            y_cache[lam] = math.exp(s)
        return y_cache[lam]

    trace: list[tuple[float, float]] = []

    def g(lam: float) -> float:
        val = risk_residual(y_of(lam), lam)
        trace.append((lam, val))
        return val

    def finish(lam, **kw) -> NestedSolution:
        y = y_of(lam)
        return NestedSolution(
            y=y, lam=lam, budget_residual=budget_residual(y, lam),
            risk_residual=risk_residual(y, lam), trace=trace, **kw,
        )

    g0 = g(0.0)
    if g0 <= cfg.abs_tol:
        if abs(g0) <= cfg.abs_tol and abs(g(1.0)) <= cfg.abs_tol:
            msg = "risk residual is flat in lambda; smallest root lambda=0 reported"
            warnings.warn(msg, NonMonotoneWarning, stacklevel=2)
            return finish(0.0, monotone=False, n_roots=SCAN_POINTS, note=msg)
        return finish(0.0, note="constraint not binding")

    lo, hi = 0.0, 1.0
    ghi = g(hi)
    while ghi > 0 and hi < LAMBDA_MAX:
        lo, hi = hi, 2.0 * hi
        ghi = g(hi)
    if ghi <= 0:
        try:
            lam = find_root(g, lo, hi, cfg, expand=False)
        except (NoBracket, MaxIter):
            lam = None
        if lam is not None and _consistent(trace, lam, cfg.abs_tol):
            return finish(lam)
    return _scan(g, y_of, budget_residual, risk_residual, trace, cfg)


def _consistent(trace, root, tol) -> bool:
    for lam, val in trace:
        if lam < root and val < -tol:
            return False
        if lam > root and val > tol:
            return False
    return True


def _scan(g, y_of, budget_residual, risk_residual, trace, cfg) -> NestedSolution:
    grid = np.concatenate([[0.0], np.geomspace(2.0**-20, LAMBDA_MAX, SCAN_POINTS - 1)])
    vals = np.array([g(float(lam)) for lam in grid])
    signs = np.where(np.abs(vals) <= cfg.abs_tol, 0, np.sign(vals)).astype(int)
    roots = []
    for i in range(len(grid)):
        if signs[i] == 0:
            roots.append((float(grid[i]), float(grid[i])))
        elif i + 1 < len(grid) and signs[i] * signs[i + 1] < 0:
            roots.append((float(grid[i]), float(grid[i + 1])))
    if not roots:
        raise Infeasible(f"risk residual has no root for lambda in [0, {LAMBDA_MAX:g}]")
    a, b = roots[0]
    lam = a if a == b else find_root(g, a, b, cfg, expand=False)
    monotone = len(roots) == 1
    note = f"scan over {SCAN_POINTS} lambda values found {len(roots)} root location(s); smallest used"
    if not monotone:
        warnings.warn(note, NonMonotoneWarning, stacklevel=3)
    y = y_of(lam)
    return NestedSolution(
        y=y, lam=lam, budget_residual=budget_residual(y, lam), risk_residual=risk_residual(y, lam),
        monotone=monotone, n_roots=len(roots), note=note, trace=trace,
    )
