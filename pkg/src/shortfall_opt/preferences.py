"""Utility and loss families, their conjugates, and the Lagrangian utility.

The families form a closed registry so that every member carries exact
derivatives, inverse marginals and the boundedness facts needed for the
asymptotic-elasticity classification:

========================  =======================  ==================
utility                   U(x)                     parameter
========================  =======================  ==================
``log``                   ln x                     none
``power``                 x**p / p                 ``p`` in (0, 1)
``shifted_reciprocal``    c - 1/x                  ``c``
========================  =======================  ==================

========================  =======================  ==================
loss (on k < 0)           L(k)                     parameter
========================  =======================  ==================
``exponential``           exp(gamma k)             ``gamma`` > 0
``scaled_reciprocal``     -beta / k                ``beta`` > 0
========================  =======================  ==================

All evaluation methods accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import DomainError
from .numerics import invert_decreasing

UTILITY_FAMILIES = {"log": None, "power": "p", "shifted_reciprocal": "c"}
LOSS_FAMILIES = {"exponential": "gamma", "scaled_reciprocal": "beta"}


def _arr(v) -> np.ndarray:
    return np.asarray(v, dtype=float)


def _positive(y, what="y") -> np.ndarray:
    y = _arr(y)
    if np.any(~(y > 0)):
        raise DomainError(f"{what} must be > 0")
    return y


@dataclass(frozen=True)
class UtilityFn:
    family: str
    param: float = math.nan

    def __post_init__(self):
        if self.family not in UTILITY_FAMILIES:
            raise ValueError(f"unknown utility family {self.family!r}")
        if self.family == "power" and not 0.0 < self.param < 1.0:
            raise ValueError("power utility needs 0 < p < 1")
        if self.family == "shifted_reciprocal" and not math.isfinite(self.param):
            raise ValueError("shifted_reciprocal utility needs a finite shift c")

    @classmethod
    def log(cls) -> UtilityFn:
        return cls("log")

    @classmethod
    def power(cls, p: float) -> UtilityFn:
        return cls("power", float(p))

    @classmethod
    def shifted_reciprocal(cls, c: float = 1.0) -> UtilityFn:
        return cls("shifted_reciprocal", float(c))

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = _arr(x)
        if self.family == "log":
            return np.log(x)
        if self.family == "power":
            return x**self.param / self.param
        return self.param - 1.0 / x

    def marginal(self, x):
        x = _arr(x)
        if self.family == "log":
            return 1.0 / x
        if self.family == "power":
            return x ** (self.param - 1.0)
        return 1.0 / (x * x)

    def second(self, x):
        x = _arr(x)
        if self.family == "log":
            return -1.0 / (x * x)
        if self.family == "power":
            return (self.param - 1.0) * x ** (self.param - 2.0)
        return -2.0 / x**3

    def inverse_marginal(self, y):
        """I = (U')^{-1}."""
        y = _positive(y)
        if self.family == "log":
            return 1.0 / y
        if self.family == "power":
            return y ** (1.0 / (self.param - 1.0))
        return 1.0 / np.sqrt(y)

    def conjugate(self, y):
        """V(y) = sup_x U(x) - x y, evaluated as U(I(y)) - y I(y)."""
        y = _positive(y)
        if self.family == "log":
            return -np.log(y) - 1.0
        if self.family == "power":
            p = self.param
            return (1.0 - p) / p * y ** (p / (p - 1.0))
        return self.param - 2.0 * np.sqrt(y)

    @property
    def sup_value(self) -> float:
        """U(+inf)."""
        return self.param if self.family == "shifted_reciprocal" else math.inf

    @property
    def bounded_above(self) -> bool:
        return math.isfinite(self.sup_value)

    @property
    def analytic_ae(self) -> float | None:
        if self.family == "log":
            return 0.0
        if self.family == "power":
            return self.param
        # x U'(x) / U(x) = 1 / (c x - 1) -> 0 when c > 0
        return 0.0 if self.param > 0 else None

    def to_dict(self) -> dict[str, Any]:
        key = UTILITY_FAMILIES[self.family]
        return {"family": self.family} if key is None else {"family": self.family, key: self.param}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> UtilityFn:
        d = dict(d)
        family = d.pop("family", None)
        if family not in UTILITY_FAMILIES:
            raise ValueError(f"unknown utility family {family!r}")
        key = UTILITY_FAMILIES[family]
        if key is None:
            if d:
                raise ValueError(f"log utility takes no parameters, got {sorted(d)}")
            return cls("log")
        if set(d) - {key}:
            raise ValueError(f"unexpected keys for {family}: {sorted(set(d) - {key})}")
        default = 1.0 if family == "shifted_reciprocal" else None
        value = d.get(key, default)
        if value is None:
            raise ValueError(f"{family} utility needs parameter {key!r}")
        return cls(family, float(value))


@dataclass(frozen=True)
class LossFn:
    family: str
    param: float

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        if not self.param > 0:
            raise ValueError(f"{LOSS_FAMILIES[self.family]} must be > 0")

    @classmethod
    def exponential(cls, gamma: float = 1.0) -> LossFn:
        return cls("exponential", float(gamma))

    @classmethod
    def scaled_reciprocal(cls, beta: float = 3.0) -> LossFn:
        return cls("scaled_reciprocal", float(beta))

    def __call__(self, k):
        return self.value(k)

    def _check(self, k):
        k = _arr(k)
        if np.any(~(k < 0)):
            raise DomainError("loss functions are defined on k < 0")
        return k

    def value(self, k):
        k = self._check(k)
        if self.family == "exponential":
            return np.exp(self.param * k)
        return -self.param / k

    def extended(self, k):
        """L on the whole line: the natural extension, or +inf where L(0-) is infinite."""
        k = _arr(k)
        if self.family == "exponential":
            return np.exp(self.param * k)
        with np.errstate(divide="ignore"):
            return np.where(k < 0, -self.param / np.minimum(k, -1e-300), np.inf)

    def log_value(self, k):
        k = self._check(k)
        if self.family == "exponential":
            return self.param * k
        return np.log(self.param) - np.log(-k)

    def log_marginal(self, k):
        k = self._check(k)
        if self.family == "exponential":
            return np.log(self.param) + self.param * k
        return np.log(self.param) - 2.0 * np.log(-k)

    def marginal(self, k):
        return self._marginal(self._check(k))

    def second(self, k):
        return self._second(self._check(k))

    # unchecked kernels for callers that have already validated k < 0
    def _marginal(self, k):
        if self.family == "exponential":
            return self.param * np.exp(self.param * k)
        return self.param / (k * k)

    def _second(self, k):
        if self.family == "exponential":
            return self.param**2 * np.exp(self.param * k)
        return -2.0 * self.param / k**3

    def inverse_marginal(self, v):
        """(L')^{-1}(v) on the range of L'; returns 0 where v >= L'(0-)."""
        v = _positive(v, "v")
        if self.family == "exponential":
            g = self.param
            return np.minimum(np.log(v / g) / g, 0.0)
        return -np.sqrt(self.param / v)

    @property
    def value_at_zero(self) -> float:
        """L(0-)."""
        return 1.0 if self.family == "exponential" else math.inf

    @property
    def marginal_at_zero(self) -> float:
        """L'(0-)."""
        return self.param if self.family == "exponential" else math.inf

    @property
    def inf_value(self) -> float:
        """L(-inf); both shipped families decay to zero."""
        return 0.0

    @property
    def bounded_below(self) -> bool:
        return math.isfinite(self.inf_value)

    @property
    def positive(self) -> bool:
        return True

    @property
    def analytic_ae_minus(self) -> float:
        # -x L'(-x) / L(-x): -gamma x for the exponential, -1 for the reciprocal
        return -math.inf if self.family == "exponential" else -1.0

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, LOSS_FAMILIES[self.family]: self.param}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LossFn:
        d = dict(d)
        family = d.pop("family", None)
        if family not in LOSS_FAMILIES:
            raise ValueError(f"unknown loss family {family!r}")
        key = LOSS_FAMILIES[family]
        if set(d) - {key}:
            raise ValueError(f"unexpected keys for {family}: {sorted(set(d) - {key})}")
        if key not in d:
            raise ValueError(f"{family} loss needs parameter {key!r}")
        return cls(family, float(d[key]))


def preferences_from_json(d: dict[str, Any]) -> tuple[UtilityFn, LossFn]:
    return UtilityFn.from_dict(d["utility"]), LossFn.from_dict(d["loss"])


def preferences_to_json(u: UtilityFn, l: LossFn) -> dict[str, Any]:
    return {"utility": u.to_dict(), "loss": l.to_dict()}


@dataclass(frozen=True)
class LagrangianUtility:
    """W(x) = U(x) - lam * L(-x) together with its conjugate machinery."""

    u: UtilityFn
    l: LossFn
    lam: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("the multiplier must be >= 0")

    def with_lambda(self, lam: float) -> LagrangianUtility:
        return LagrangianUtility(self.u, self.l, float(lam))

    def value(self, x):
        x = _arr(x)
        if self.lam == 0:
            return self.u.value(x)
        return self.u.value(x) - self.lam * self.l.value(-x)

    __call__ = value

    def marginal(self, x):
        x = _positive(x, "x")
        return self._marginal(x)

    def second(self, x):
        x = _positive(x, "x")
        return self._second(x)

    def _marginal(self, x):
        if self.lam == 0:
            return self.u.marginal(x)
        return self.u.marginal(x) + self.lam * self.l._marginal(-x)

    def _second(self, x):
        if self.lam == 0:
            return self.u.second(x)
        return self.u.second(x) - self.lam * self.l._second(-x)

    @property
    def closed_form(self) -> bool:
        return self.lam == 0 or (
            self.l.family == "scaled_reciprocal" and self.u.family in ("shifted_reciprocal", "log")
        )

    def h(self, y):
        y = _positive(y)
        if self.lam == 0:
            return self.u.inverse_marginal(y)
        if self.l.family == "scaled_reciprocal":
            kb = self.lam * self.l.param
            if self.u.family == "shifted_reciprocal":
                # W'(x) = (1 + lam beta) / x^2
                return np.sqrt((1.0 + kb) / y)
            if self.u.family == "log":
                # y x^2 - x - lam beta = 0
                return (1.0 + np.sqrt(1.0 + 4.0 * y * kb)) / (2.0 * y)
        # W' > U' gives H(y) > I(y); at the larger of I(y/2) and -(L')^{-1}(y/2lam)
        # each term of W' is at most y/2, so H(y) lies below it
        lo = self.u.inverse_marginal(y)
        with np.errstate(over="ignore"):
            v = 0.5 * y / self.lam
        # v = inf (tiny lam) makes (L')^{-1} irrelevant; clip keeps it finite
        v = np.minimum(v, np.finfo(float).max)
        hi = np.maximum(self.u.inverse_marginal(0.5 * y), -self.l.inverse_marginal(v))
        hi = np.maximum(hi, lo * (1.0 + 1e-12))
        return invert_decreasing(self._marginal, y, lo, hi, dfn=self._second)

    def conjugate(self, y):
        y = _positive(y)
        if self.l.family == "scaled_reciprocal" and self.u.family == "shifted_reciprocal":
            return self.u.param - 2.0 * np.sqrt((1.0 + self.lam * self.l.param) * y)
        x = self.h(y)
        return self.value(x) - y * x


def conjugate_V(u: UtilityFn, y):
    """Legendre transform V(y) = sup_{x>0} U(x) - x y."""
    return u.conjugate(y)


def inverse_marginal_I(u: UtilityFn, y):
    return u.inverse_marginal(y)


def h_lambda(lag: LagrangianUtility, y):
    """Unique x > 0 with U'(x) + lam L'(-x) = y."""
    return lag.h(y)


def conjugate_Z(lag: LagrangianUtility, y):
    """Conjugate of the Lagrangian utility, computed through the first-order condition."""
    return lag.conjugate(y)


def conjugate_gap(lag: LagrangianUtility, y, log: bool = False):
    """V(y) - Z(y), evaluated so that its sign survives floating point.

    With H = H_lam(y) and I = I(y) the gap is ``lam * L(-H) + D`` where
    ``D = V(y) - [U(H) - y H] >= 0``.  When the marginal perturbation
    ``lam L'(-H)`` is small relative to ``y``, D is taken from its quadratic
    expansion ``(lam L'(-H))**2 / (2 |U''(I)|)`` instead of a cancelling
    difference.  With ``log=True`` the natural log of the gap is returned;
    it stays finite even where ``L(-H)`` underflows.
    """
    y = _positive(y)
    x = lag.h(y)
    if lag.lam == 0:
        zero = np.zeros_like(y)
        return np.full_like(y, -np.inf) if log else zero
    i = lag.u.inverse_marginal(y)
    curv = np.abs(lag.u.second(i))
    with np.errstate(under="ignore", divide="ignore"):
        log_pert = math.log(lag.lam) + lag.l.log_marginal(-x)
        small = log_pert - np.log(y) < math.log(1e-3)
        direct = np.maximum(lag.u.conjugate(y) - (lag.u.value(x) - y * x), 0.0)
        log_slack = np.where(small, math.log(0.5) + 2.0 * log_pert - np.log(curv), np.log(direct))
        log_loss = math.log(lag.lam) + lag.l.log_value(-x)
        if log:
            return np.logaddexp(log_slack, log_loss)
        return np.exp(log_slack) + np.exp(log_loss)


# ---------------------------------------------------------------------------
# asymptotic elasticity

AE_GUARD = 0.02


def estimate_ae(f_value: Callable, f_derivative: Callable, x_max: float = 1e12, n_points: int = 64) -> float:
    """Grid proxy for limsup x f'(x) / f(x) as x -> inf.

    This is the maximum of the elasticity over ``n_points`` log-spaced points
    in ``[x_max/100, x_max]``, an estimate and not the true limsup.  Returns
    ``nan`` (undetermined) when f is not positive on the whole grid, since
    the elasticity is only meaningful for a positive tail.
    """
    if x_max < 1e4 or n_points < 32:
        raise ValueError("need x_max >= 1e4 and n_points >= 32")
    x = np.geomspace(x_max / 100.0, x_max, n_points)
    f = _arr(f_value(x))
    if np.any(f <= 0):
        return math.nan
    return float(np.max(x * _arr(f_derivative(x)) / f))


def estimate_ae_minus(l: LossFn, x_max: float = 1e12, n_points: int = 64) -> float:
    """Grid proxy for AE_-(L) = limsup_{x->inf} -x L'(-x) / L(-x)."""
    x = np.geomspace(x_max / 100.0, x_max, n_points)
    with np.errstate(under="ignore"):
        lv = l.value(-x)
        ld = l.marginal(-x)
    ok = lv > 0
    if not ok.any():
        # exp(-gamma x) underflows: the ratio is -gamma x at every grid point
        return float(-l.param * x[0]) if l.family == "exponential" else math.nan
    return float(np.max(-x[ok] * ld[ok] / lv[ok]))


CASE_BOUNDED = "bounded_bounded"
CASE_1 = "unbounded_u_bounded_l"
CASE_2 = "both_unbounded"
CASE_3 = "bounded_u_unbounded_l"


@dataclass(frozen=True)
class AEReport:
    ae_estimate: float
    analytic_ae: float | None
    verdict: str
    case: str
    ae_u_estimate: float
    ae_l_estimate: float
    ae_u_analytic: float | None
    ae_l_analytic: float | None

    def to_dict(self) -> dict[str, Any]:
        def clean(v):
            return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v

        return {
            "verdict": self.verdict,
            "case": self.case,
            "ae_estimate": clean(self.ae_estimate),
            "analytic_ae": clean(self.analytic_ae),
            "ae_u_estimate": clean(self.ae_u_estimate),
            "ae_u_analytic": clean(self.ae_u_analytic),
            "ae_l_estimate": clean(self.ae_l_estimate),
            "ae_l_analytic": clean(self.ae_l_analytic),
        }


def lemma_case(u_bounded: bool, l_bounded: bool) -> str:
    if u_bounded and l_bounded:
        return CASE_BOUNDED
    if not u_bounded and l_bounded:
        return CASE_1
    if not u_bounded:
        return CASE_2
    return CASE_3


def _below_one(v: float, estimated: bool) -> str:
    if v is None or math.isnan(v):
        return "undetermined"
    if estimated and abs(v - 1.0) <= AE_GUARD:
        return "undetermined"
    return "below_one" if v < 1.0 else "at_or_above_one"


def lemma_verdict(case: str, ae_u: float | None, ae_l: float | None, estimated: bool = False) -> str:
    """Whether the branch conditions guaranteeing AE(W) < 1 hold."""
    if case == CASE_BOUNDED:
        return "below_one"
    if case == CASE_1:
        return _below_one(ae_u, estimated)
    if case == CASE_3:
        return _below_one(ae_l, estimated)
    verdicts = {_below_one(ae_u, estimated), _below_one(ae_l, estimated)}
    if "at_or_above_one" in verdicts:
        return "at_or_above_one"
    return "undetermined" if "undetermined" in verdicts else "below_one"


def classify_ae_w(u: UtilityFn, l: LossFn, x_max: float = 1e12, n_points: int = 64) -> AEReport:
    ae_u_est = estimate_ae(u.value, u.marginal, x_max, n_points)
    ae_l_est = estimate_ae_minus(l, x_max, n_points)
    case = lemma_case(u.bounded_above, l.bounded_below)
    ae_u_an, ae_l_an = u.analytic_ae, l.analytic_ae_minus

    def combine(a, b):
        if case == CASE_3:
            return b
        if case == CASE_2:
            return None if a is None or b is None else max(a, b)
        return a

    analytic = combine(ae_u_an, ae_l_an)
    estimate = combine(ae_u_est, ae_l_est)
    if ae_u_an is not None and ae_l_an is not None:
        verdict = lemma_verdict(case, ae_u_an, ae_l_an)
    else:
        verdict = lemma_verdict(case, ae_u_est, ae_l_est, estimated=True)
    return AEReport(
        ae_estimate=math.nan if estimate is None else float(estimate),
        analytic_ae=analytic,
        verdict=verdict,
        case=case,
        ae_u_estimate=ae_u_est,
        ae_l_estimate=ae_l_est,
        ae_u_analytic=ae_u_an,
        ae_l_analytic=ae_l_an,
    )


SHIPPED_UTILITIES = (UtilityFn.log(), UtilityFn.power(0.5), UtilityFn.shifted_reciprocal(1.0))
SHIPPED_LOSSES = (LossFn.exponential(1.0), LossFn.scaled_reciprocal(3.0))
