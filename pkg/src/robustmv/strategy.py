"""From a worst-case scenario to the optimal robust trading rule.

Once the worst-case pair (b*, rho*) is known, the robust problem reduces
to the classical dynamic mean-variance problem under that model.  The
optimal amount invested is linear in current wealth,

    alpha(x) = (x0 + e^{r* T} / (2 lam) - x) * Sigma(rho*)^{-1} b*,

the initial value of the objective is x0 + (e^{r* T} - 1) / (4 lam), and
the zero pattern of the direction vector Sigma(rho*)^{-1} b* classifies
how diversified the robust portfolio is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import MarketParams, ThetaPoint, _frozen, risk_premium, variance_risk_ratio
from .solver import WorstCaseSolution

# A direction component below this fraction of the largest one counts as zero.
ZERO_DIRECTION_RTOL = 1e-10

NO_TRADE = "no_trade"
ANTI_DIVERSIFIED = "anti_diversification"
UNDER_DIVERSIFIED = "under_diversification"
WELL_DIVERSIFIED = "well_diversified"
DIRECTIONAL = "directional"
SPREAD = "spread"


@dataclass(frozen=True)
class FeedbackStrategy:
    """Wealth-linear trading rule alpha(x) = multiplier(x) * direction."""

    theta_star: ThetaPoint
    allocation_direction: np.ndarray
    r_star: float
    x0: float
    lam: float
    horizon_T: float

    def __post_init__(self):
        object.__setattr__(self, "allocation_direction", _frozen(self.allocation_direction))

    def wealth_multiplier(self, x):
        """Scalar weight x0 + e^{r* T} / (2 lam) - x; positive along the optimal flow."""
        return self.x0 + math.exp(self.r_star * self.horizon_T) / (2.0 * self.lam) - np.asarray(x)


def robust_strategy(solution: WorstCaseSolution, params: MarketParams) -> FeedbackStrategy:
    """Optimal robust rule for a solved instance."""
    direction = variance_risk_ratio(solution.theta_star, params)
    return FeedbackStrategy(
        theta_star=solution.theta_star,
        allocation_direction=direction,
        r_star=solution.r_star,
        x0=params.x0,
        lam=params.lam,
        horizon_T=params.horizon_T,
    )


def classical_strategy(theta0: ThetaPoint, params: MarketParams) -> FeedbackStrategy:
    """Mean-variance rule when the model (b0, rho0) is known exactly.

    Identical to robust_strategy applied to a singleton ambiguity set.
    """
    r0 = risk_premium(theta0, params)
    direction = variance_risk_ratio(theta0, params)
    return FeedbackStrategy(
        theta_star=theta0,
        allocation_direction=direction,
        r_star=r0,
        x0=params.x0,
        lam=params.lam,
        horizon_T=params.horizon_T,
    )


def evaluate_alpha(strategy: FeedbackStrategy, t: float, x):
    """Amounts invested at time t and wealth x.

    t only enters through x in this rule; it is accepted so the interface
    survives time-dependent extensions.  x may be a scalar (returns a
    length-d vector) or a vector of wealths (returns an (n, d) array).
    """
    mult = strategy.wealth_multiplier(x)
    if np.ndim(mult) == 0:
        return float(mult) * strategy.allocation_direction
    return np.asarray(mult)[:, None] * strategy.allocation_direction[None, :]


def value_v0(solution: WorstCaseSolution, params: MarketParams) -> float:
    """Initial value of the robust mean-variance objective."""
    return params.x0 + (math.exp(solution.r_star * params.horizon_T) - 1.0) / (4.0 * params.lam)


def mean_wealth_path(strategy: FeedbackStrategy, t_grid) -> np.ndarray:
    """Expected optimal wealth under the worst-case model at each grid time."""
    t = np.asarray(t_grid, dtype=float)
    r, lam, horizon = strategy.r_star, strategy.lam, strategy.horizon_T
    return strategy.x0 + math.exp(r * horizon) / (2.0 * lam) * (1.0 - np.exp(-r * t))


@dataclass(frozen=True)
class ValueCoefficients:
    """Deterministic coefficients of the verification value process.

    v_t(x, xbar) = quad_coeff(t) (x - xbar)^2 + x + offset(t), with
    quad_coeff(T) = -lam and offset(T) = 0.
    """

    r_star: float
    lam: float
    horizon_T: float

    def quad_coeff(self, t):
        return -self.lam * np.exp(self.r_star * (np.asarray(t, dtype=float) - self.horizon_T))

    def offset(self, t):
        return (np.exp(self.r_star * (self.horizon_T - np.asarray(t, dtype=float))) - 1.0) / (
            4.0 * self.lam
        )

    linear_coeff = 1.0


def value_coefficients(solution: WorstCaseSolution, params: MarketParams) -> ValueCoefficients:
    return ValueCoefficients(r_star=solution.r_star, lam=params.lam, horizon_T=params.horizon_T)


@dataclass(frozen=True)
class DiversificationReport:
    """Zero pattern and signs of the allocation direction, with a verdict.

    kind      one of no_trade / anti_diversification / under_diversification /
              well_diversified
    asset     the single traded asset (anti-diversification only), 0-based
    excluded  assets receiving exactly zero allocation (may be empty)
    mode      directional (two surviving positions share sign) or spread
              (opposite signs); set whenever exactly two positions survive
    signs     +1 / 0 / -1 per asset
    """

    kind: str
    asset: int | None
    excluded: tuple[int, ...]
    mode: str | None
    signs: tuple[int, ...]
    case_label: str
    narrative: str


def classify(solution: WorstCaseSolution, params: MarketParams) -> DiversificationReport:
    """Diversification verdict for a solved instance."""
    direction = variance_risk_ratio(solution.theta_star, params)
    scale = float(np.max(np.abs(direction))) if direction.size else 0.0
    if scale == 0.0 or solution.no_trade:
        signs = tuple(0 for _ in range(params.d))
        return DiversificationReport(
            kind=NO_TRADE,
            asset=None,
            excluded=tuple(range(params.d)),
            mode=None,
            signs=signs,
            case_label=solution.case_label,
            narrative="no trade: the worst-case drift is zero, hold only the risk-free asset",
        )
    zero = np.abs(direction) < ZERO_DIRECTION_RTOL * scale
    signs = tuple(0 if z else (1 if v > 0 else -1) for z, v in zip(zero, direction))
    live = [i for i, z in enumerate(zero) if not z]
    excluded = tuple(i for i, z in enumerate(zero) if z)
    mode = None
    if len(live) == 2:
        mode = DIRECTIONAL if signs[live[0]] == signs[live[1]] else SPREAD
    if len(live) == 1:
        asset = live[0]
        side = "long" if signs[asset] > 0 else "short"
        return DiversificationReport(
            kind=ANTI_DIVERSIFIED,
            asset=asset,
            excluded=excluded,
            mode=None,
            signs=signs,
            case_label=solution.case_label,
            narrative=f"anti-diversification: invest only in asset {asset + 1} ({side})",
        )
    if excluded:
        names = ", ".join(str(i + 1) for i in excluded)
        kind_txt = f" ({mode} trade in the remaining assets)" if mode else ""
        return DiversificationReport(
            kind=UNDER_DIVERSIFIED,
            asset=None,
            excluded=excluded,
            mode=mode,
            signs=signs,
            case_label=solution.case_label,
            narrative=f"under-diversification: no investment in asset {names}{kind_txt}",
        )
    sign_txt = "".join("+" if s > 0 else "-" for s in signs)
    mode_txt = f", {mode} trade" if mode else ""
    return DiversificationReport(
        kind=WELL_DIVERSIFIED,
        asset=None,
        excluded=(),
        mode=mode,
        signs=signs,
        case_label=solution.case_label,
        narrative=f"well-diversified: positions in every asset, signs {sign_txt}{mode_txt}",
    )


def strategy_report(solution: WorstCaseSolution, params: MarketParams) -> dict:
    """JSON-ready summary: scenario, value, direction, diversification."""
    report = classify(solution, params)
    strategy = robust_strategy(solution, params)
    return {
        "theta_star": {
            "b": solution.theta_star.b.tolist(),
            "rho": solution.theta_star.rho.tolist(),
        },
        "r_star": solution.r_star,
        "V0": value_v0(solution, params),
        "direction": strategy.allocation_direction.tolist(),
        "class": report.kind,
        "mode": report.mode,
        "signs": list(report.signs),
        "case_label": solution.case_label,
        "narrative": report.narrative,
    }
