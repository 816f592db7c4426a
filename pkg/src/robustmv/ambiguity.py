"""Uncertainty sets for the drift/correlation pair and scenario schedules.

Two families are supported:

* ProductSet: a rectangular drift box times a correlation box, drift and
  correlation uncertainty independent of each other.
* EllipsoidalSet: for each admissible correlation rho, the drift lies in
  the ellipsoid ||sigma(rho)^{-1}(b - b_hat)||_2 <= delta around an anchor
  estimate b_hat; the correlation ranges over a box or the full
  positive-definite region.

Membership tests, projections used by the numeric solvers, and a
deterministic rejection sampler live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoFeasiblePoint, SamplingExhausted
from .market import (
    MarketParams,
    ThetaPoint,
    _frozen,
    covariance_from,
    is_positive_definite,
    n_pairs,
)

# Absolute slack on the ellipsoid inequality; the set is closed, floats are not.
MEMBERSHIP_TOL = 1e-9
# Rejection sampling gives up after this many consecutive misses.
MAX_REJECTIONS = 10**6
# Stand-in bounds when the correlation set is the full PD region.
FULL_CLIP = 1.0 - 1e-9


@dataclass(frozen=True)
class GammaBox:
    """Per-pair correlation bounds, or the full PD region when full_ambiguity."""

    lower: np.ndarray
    upper: np.ndarray
    full_ambiguity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lower", _frozen(self.lower))
        object.__setattr__(self, "upper", _frozen(self.upper))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower/upper bounds must have equal length")
        if not self.full_ambiguity:
            if np.any(self.lower > self.upper):
                raise ValueError("lower bounds must not exceed upper bounds")
            if self.lower.size and (np.any(np.abs(self.lower) >= 1) or np.any(np.abs(self.upper) >= 1)):
                raise ValueError("correlation bounds must lie inside (-1, 1)")

    @classmethod
    def full(cls, d: int) -> "GammaBox":
        m = n_pairs(d)
        return cls(lower=np.full(m, -FULL_CLIP), upper=np.full(m, FULL_CLIP), full_ambiguity=True)

    @classmethod
    def box(cls, lower, upper) -> "GammaBox":
        return cls(lower=np.asarray(lower, dtype=float), upper=np.asarray(upper, dtype=float))

    @classmethod
    def singleton(cls, rho) -> "GammaBox":
        rho = np.asarray(rho, dtype=float)
        return cls(lower=rho.copy(), upper=rho.copy())

    @property
    def n_pairs(self) -> int:
        return self.lower.size

    def bounds(self):
        """Effective (lower, upper) arrays; full ambiguity maps to wide clips."""
        return self.lower, self.upper

    def rho_in_box(self, rho: np.ndarray) -> bool:
        if self.full_ambiguity:
            return bool(np.all(np.abs(rho) <= 1.0))
        return bool(np.all(rho >= self.lower) and np.all(rho <= self.upper))

    def is_singleton(self) -> bool:
        return not self.full_ambiguity and bool(np.all(self.lower == self.upper))


@dataclass(frozen=True)
class ProductSet:
    """Rectangular drift bounds combined independently with a correlation box."""

    delta_lower: np.ndarray
    delta_upper: np.ndarray
    gamma: GammaBox

    def __post_init__(self):
        object.__setattr__(self, "delta_lower", _frozen(self.delta_lower))
        object.__setattr__(self, "delta_upper", _frozen(self.delta_upper))
        if self.delta_lower.shape != self.delta_upper.shape:
            raise ValueError("drift bounds must have equal length")
        if np.any(self.delta_lower > self.delta_upper):
            raise ValueError("drift lower bounds must not exceed upper bounds")
        if self.gamma.n_pairs != n_pairs(self.d):
            raise ValueError("gamma box dimension inconsistent with drift dimension")

    @property
    def d(self) -> int:
        return self.delta_lower.size

    def is_singleton(self) -> bool:
        return bool(np.all(self.delta_lower == self.delta_upper)) and self.gamma.is_singleton()


@dataclass(frozen=True)
class EllipsoidalSet:
    """Drift ellipsoid of radius delta around b_hat, in the sigma(rho) metric."""

    b_hat: np.ndarray
    delta: float
    gamma: GammaBox

    def __post_init__(self):
        object.__setattr__(self, "b_hat", _frozen(self.b_hat))
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.gamma.n_pairs != n_pairs(self.d):
            raise ValueError("gamma box dimension inconsistent with drift dimension")

    @property
    def d(self) -> int:
        return self.b_hat.size

    def is_singleton(self) -> bool:
        return self.delta == 0.0 and self.gamma.is_singleton()


AmbiguitySpec = ProductSet | EllipsoidalSet


def drift_distance(b, b_hat, rho, params: MarketParams) -> float:
    """||sigma(rho)^{-1} (b - b_hat)||_2 for positive-definite rho."""
    cov = covariance_from(rho, params)
    y = cov.half_solve(np.asarray(b, dtype=float) - b_hat)
    return float(np.sqrt(y @ y))


def contains(spec: AmbiguitySpec, theta: ThetaPoint, params: MarketParams) -> bool:
    """Membership test with boundary-inclusive comparisons."""
    if not spec.gamma.rho_in_box(theta.rho):
        return False
    if not is_positive_definite(theta.rho, params.d):
        return False
    if isinstance(spec, ProductSet):
        return bool(np.all(theta.b >= spec.delta_lower) and np.all(theta.b <= spec.delta_upper))
    return drift_distance(theta.b, spec.b_hat, theta.rho, params) <= spec.delta + MEMBERSHIP_TOL


def project_rho(spec: AmbiguitySpec, rho) -> np.ndarray:
    """Clamp rho into the correlation box, then repair to a PD point if needed.

    The repair shrinks the clamped point toward the box anchor (the origin
    when it is inside the box, the box midpoint otherwise) by bisection.
    Idempotent on feasible points, bitwise.
    """
    lower, upper = spec.gamma.bounds()
    d = spec.d
    clamped = np.clip(np.asarray(rho, dtype=float), lower, upper)
    if is_positive_definite(clamped, d):
        return clamped
    if np.all(lower <= 0.0) and np.all(upper >= 0.0):
        anchor = np.zeros_like(clamped)
    else:
        anchor = 0.5 * (lower + upper)
    if not is_positive_definite(anchor, d):
        raise NoFeasiblePoint("no positive-definite point found inside the correlation box")
    # Bisect on t in [0, 1]: anchor is PD, the clamped point is not.
    lo, hi = 0.0, 1.0
    best = anchor
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        candidate = np.clip(anchor + mid * (clamped - anchor), lower, upper)
        if is_positive_definite(candidate, d):
            best, lo = candidate, mid
        else:
            hi = mid
    return best


def project_b(spec: AmbiguitySpec, b, rho, params: MarketParams) -> np.ndarray:
    """Nearest feasible drift given rho (exact projection for both families)."""
    b = np.asarray(b, dtype=float)
    if isinstance(spec, ProductSet):
        return np.clip(b, spec.delta_lower, spec.delta_upper)
    if spec.delta == 0.0:
        return spec.b_hat.copy()
    dist = drift_distance(b, spec.b_hat, rho, params)
    if dist <= spec.delta:
        return b
    return spec.b_hat + (spec.delta / dist) * (b - spec.b_hat)


def sample(spec: AmbiguitySpec, count: int, seed: int, params: MarketParams) -> list[ThetaPoint]:
    """Deterministic-for-seed feasible draws, rejection-sampled until contained."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    lower, upper = spec.gamma.bounds()
    if spec.gamma.full_ambiguity:
        lower, upper = np.full_like(lower, -1.0), np.full_like(upper, 1.0)
    d = spec.d
    out: list[ThetaPoint] = []
    misses = 0
    while len(out) < count:
        rho = rng.uniform(lower, upper) if lower.size else np.zeros(0)
        if isinstance(spec, ProductSet):
            b = rng.uniform(spec.delta_lower, spec.delta_upper)
        else:
            if not is_positive_definite(rho, d):
                misses += 1
                if misses >= MAX_REJECTIONS:
                    raise SamplingExhausted(f"{MAX_REJECTIONS} consecutive rejections")
                continue
            # Uniform draw in the unit ball, mapped through the covariance factor.
            z = rng.standard_normal(d)
            norm = float(np.linalg.norm(z))
            if norm == 0.0:
                continue
            radius = rng.uniform() ** (1.0 / d)
            ball = (radius / norm) * z
            chol = covariance_from(rho, params).chol
            b = spec.b_hat + spec.delta * (chol @ ball)
        theta = ThetaPoint(b=b, rho=rho)
        if contains(spec, theta, params):
            out.append(theta)
            misses = 0
        else:
            misses += 1
            if misses >= MAX_REJECTIONS:
                raise SamplingExhausted(f"{MAX_REJECTIONS} consecutive rejections")
    return out


@dataclass(frozen=True)
class ThetaProcessSchedule:
    """Deterministic piecewise-constant scenario for the parameter process.

    values[k] applies on [breakpoints[k], breakpoints[k+1]) and the final
    value extends to the horizon.
    """

    breakpoints: np.ndarray
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _frozen(self.breakpoints))
        object.__setattr__(self, "values", tuple(self.values))
        if self.breakpoints.size != len(self.values):
            raise ValueError("one value per breakpoint required")
        if self.breakpoints.size == 0:
            raise ValueError("schedule must have at least one piece")
        if self.breakpoints[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, theta: ThetaPoint) -> "ThetaProcessSchedule":
        return cls(breakpoints=np.zeros(1), values=(theta,))

    def value_at(self, t: float) -> ThetaPoint:
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.values[max(k, 0)]

    def pieces(self, horizon: float):
        """(t_start, t_end, theta) triples covering [0, horizon]."""
        ends = np.append(self.breakpoints[1:], horizon)
        return [
            (float(start), float(min(end, horizon)), theta)
            for start, end, theta in zip(self.breakpoints, ends, self.values)
            if start < horizon or start == 0.0
        ]


def schedule_within(spec: AmbiguitySpec, schedule: ThetaProcessSchedule, params: MarketParams) -> bool:
    """True when every scheduled value is a member of the ambiguity set."""
    return all(contains(spec, theta, params) for theta in schedule.values)
