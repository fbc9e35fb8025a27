"""Problem configuration files (JSON), validated with pydantic; unknown keys are rejected."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, model_validator

from .bsmarket import MarketModel
from .discrete import DiscreteMarket
from .preferences import LossFn, UtilityFn


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BSMarketSpec(_Strict):
    T: PositiveFloat
    grid: list[float]
    r: list[float]
    mu: list[list[float]]
    sigma: list[list[list[float]]]
    s0: Optional[list[float]] = None


class DiscreteMarketSpec(_Strict):
    probs: list[float]
    payoffs: list[list[float]]
    spot: list[float]


class PreferenceSpec(_Strict):
    utility: dict
    loss: dict


class ProblemConfig(_Strict):
    market: Union[BSMarketSpec, DiscreteMarketSpec]
    preferences: Optional[PreferenceSpec] = None
    utility: Optional[dict] = None
    loss: Optional[dict] = None
    x: PositiveFloat = 1.0
    x1: Union[float, Literal["mid", "r_min", "r_max"]] = "mid"
    truncation: Optional[tuple[Optional[float], Optional[float]]] = None
    lambda_fixed: Optional[float] = Field(default=None, alias="lambda", ge=0)
    quadrature_order: int = Field(default=64, ge=1, le=256)
    seed: int = Field(default=42, ge=0, lt=2**64)
    expected: Optional[dict[str, float]] = None
    expected_rel_tol: PositiveFloat = 1e-8

    @model_validator(mode="after")
    def _preferences_once(self):
        nested = self.preferences is not None
        flat = self.utility is not None or self.loss is not None
        if nested == flat:
            raise ValueError("give utility and loss either at top level or under 'preferences', exactly once")
        if flat and (self.utility is None or self.loss is None):
            raise ValueError("both utility and loss are required")
        UtilityFn.from_dict(self.utility_spec)
        LossFn.from_dict(self.loss_spec)
        return self

    @property
    def utility_spec(self) -> dict:
        return self.preferences.utility if self.preferences else self.utility

    @property
    def loss_spec(self) -> dict:
        return self.preferences.loss if self.preferences else self.loss

    @property
    def kind(self) -> str:
        return "bs" if isinstance(self.market, BSMarketSpec) else "discrete"

    def build(self):
        """(market object, utility, loss)."""
        u, l = UtilityFn.from_dict(self.utility_spec), LossFn.from_dict(self.loss_spec)
        m = self.market
        if isinstance(m, BSMarketSpec):
            market = MarketModel(m.T, m.grid, m.r, m.mu, m.sigma, m.s0)
        else:
            market = DiscreteMarket(m.probs, m.payoffs, m.spot, self.x)
        return market, u, l

    @property
    def truncation_pair(self) -> tuple[float, float]:
        if self.truncation is None:
            return 0.0, math.inf
        lo, hi = self.truncation
        return (0.0 if lo is None else lo), (math.inf if hi is None else hi)


def load_config(path: str | Path) -> ProblemConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return ProblemConfig.model_validate(raw)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
