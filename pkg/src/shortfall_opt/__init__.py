"""Expected-utility maximisation under a utility-based shortfall risk constraint."""

from .bsmarket import (
    DualSolution,
    MarketModel,
    PathSet,
    density_terminal,
    example_strategy,
    example_wealth_F,
    hedge_replication_error,
    optimal_terminal_wealth,
    simulate,
    solve_dual,
    terminal_cdf,
)
from .discrete import DiscreteMarket, MeasureSet, dual_value_z, emm_set, primal_lagrangian, solve_constrained, verify_bidual
from .errors import (
    ArbitrageDetected,
    BoundaryWarning,
    DomainError,
    Infeasible,
    MaxIter,
    NoBracket,
    NonMonotoneWarning,
    ShortfallOptError,
)
from .numerics import QuadratureRule, RootConfig, find_root, gauss_hermite, nested_solve
from .preferences import (
    AEReport,
    LagrangianUtility,
    LossFn,
    UtilityFn,
    classify_ae_w,
    conjugate_V,
    conjugate_Z,
    estimate_ae,
    h_lambda,
    inverse_marginal_I,
)
from .risk import FeasibilityInterval, WealthDistribution, entropic_risk, expected_loss, feasible_interval, shortfall_risk

__version__ = "0.1.0"
