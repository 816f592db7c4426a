"""Correlation and covariance algebra for a market of d risky assets.

The market is parametrized by known marginal volatilities sigma_1..sigma_d
and an unknown pair theta = (b, rho) of drift vector and correlation
coordinates.  A correlation candidate rho is stored as the strictly upper
triangle of the d x d correlation matrix, in row-major order:

    rho = (rho_12, rho_13, ..., rho_1d, rho_23, ..., rho_(d-1)d)

Core quantities:

    C(rho)        correlation matrix with unit diagonal
    Sigma(rho)    = diag(sigma) C(rho) diag(sigma), the covariance matrix
    R(theta)      = b' Sigma(rho)^{-1} b, the squared market price of risk
    kappa(theta)  = Sigma(rho)^{-1} b, the per-asset allocation direction

All functions are pure; values are immutable after construction.  No
explicit matrix inverse is formed anywhere: R and kappa go through
triangular solves against a cached lower-triangular factor L, L L' =
Sigma(rho).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

# A correlation candidate counts as positive definite when every pivot of
# the symmetric triangular factorization exceeds this fraction of the
# largest diagonal entry.
PD_TOLERANCE = 1e-10


def n_pairs(d: int) -> int:
    """Number of strictly-upper-triangle entries for d assets."""
    return d * (d - 1) // 2


def pair_indices(d: int) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, in the row-major order used by rho vectors."""
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def pair_position(i: int, j: int, d: int) -> int:
    """Position of pair (i, j), i < j, inside a rho vector of dimension d."""
    if not 0 <= i < j < d:
        raise ValueError(f"invalid pair ({i}, {j}) for d={d}")
    return i * (2 * d - i - 3) // 2 + j - 1


def as_rho(entries, d: int) -> np.ndarray:
    """Validate and freeze a rho vector of length d(d-1)/2."""
    rho = np.atleast_1d(np.asarray(entries, dtype=float))
    if rho.shape != (n_pairs(d),):
        raise ValueError(f"rho must have length {n_pairs(d)} for d={d}, got shape {rho.shape}")
    if np.any(np.abs(rho) > 1.0) or not np.all(np.isfinite(rho)):
        raise ValueError("rho entries must lie in [-1, 1]")
    rho.flags.writeable = False
    return rho


def _frozen(values) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MarketParams:
    """Fixed, known market inputs.

    sigmas     marginal volatilities per sqrt(time), all > 0
    horizon_T  investment horizon in years
    lam        risk-aversion weight on the terminal-wealth variance
    x0         initial wealth
    """

    sigmas: np.ndarray
    horizon_T: float
    lam: float
    x0: float

    def __post_init__(self):
        object.__setattr__(self, "sigmas", _frozen(self.sigmas))
        if self.sigmas.ndim != 1 or self.sigmas.size < 1:
            raise ValueError("sigmas must be a non-empty vector")
        if not np.all(self.sigmas > 0):
            raise ValueError("all volatilities must be strictly positive")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def d(self) -> int:
        return self.sigmas.size


@dataclass(frozen=True)
class ThetaPoint:
    """A drift/correlation candidate (b, rho)."""

    b: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _frozen(self.b))
        d = self.b.size
        object.__setattr__(self, "rho", as_rho(self.rho, d))

    @property
    def d(self) -> int:
        return self.b.size


def correlation_matrix(rho, d: int) -> np.ndarray:
    """Dense symmetric C(rho) with unit diagonal; exactly symmetric bitwise."""
    rho = as_rho(rho, d)
    c = np.eye(d)
    for k, (i, j) in enumerate(pair_indices(d)):
        c[i, j] = rho[k]
        c[j, i] = rho[k]
    return c


def _factor(matrix: np.ndarray, rel_tol: float = PD_TOLERANCE):
    """Attempt L L' = matrix with a pivot-by-pivot tolerance check.

    Returns (L, None) on success or (None, k) with k the index of the first
    pivot at or below rel_tol * max(diagonal).
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    lower = np.zeros_like(a)
    threshold = rel_tol * float(np.max(np.diag(a))) if n else 0.0
    for k in range(n):
        pivot = a[k, k] - lower[k, :k] @ lower[k, :k]
        if not pivot > threshold:
            return None, k
        lower[k, k] = math.sqrt(pivot)
        if k + 1 < n:
            lower[k + 1:, k] = (a[k + 1:, k] - lower[k + 1:, :k] @ lower[k, :k]) / lower[k, k]
    return lower, None


def is_positive_definite(rho, d: int) -> bool:
    """True iff C(rho) is positive definite under the pivot tolerance."""
    lower, _ = _factor(correlation_matrix(rho, d))
    return lower is not None


@dataclass(frozen=True)
class CovMatrix:
    """Covariance matrix Sigma(rho) with its cached lower-triangular factor."""

    matrix: np.ndarray
    chol: np.ndarray = field(repr=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Sigma^{-1} rhs via forward + backward triangular solves."""
        y = solve_triangular(self.chol, rhs, lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def half_solve(self, rhs: np.ndarray) -> np.ndarray:
        """L^{-1} rhs, so that ||half_solve(b)||^2 = b' Sigma^{-1} b."""
        return solve_triangular(self.chol, rhs, lower=True)


def covariance_from(rho, params: MarketParams) -> CovMatrix:
    """Sigma(rho) = diag(sigma) C(rho) diag(sigma) with cached factor.

    Raises NotPositiveDefinite (carrying the failing pivot index) when
    C(rho) fails the tolerance test.
    """
    d = params.d
    corr = correlation_matrix(rho, d)
    lower_c, bad = _factor(corr)
    if lower_c is None:
        raise NotPositiveDefinite(
            f"correlation matrix is not positive definite (pivot {bad})", pivot_index=bad
        )
    scale = params.sigmas
    sigma = corr * np.outer(scale, scale)
    chol = lower_c * scale[:, None]  # (S L)(S L)' = S C S
    sigma.flags.writeable = False
    chol.flags.writeable = False
    return CovMatrix(matrix=sigma, chol=chol)


def risk_premium(theta: ThetaPoint, params: MarketParams) -> float:
    """Squared market price of risk R(theta) = b' Sigma(rho)^{-1} b >= 0."""
    cov = covariance_from(theta.rho, params)
    y = cov.half_solve(theta.b)
    return float(y @ y)


def variance_risk_ratio(theta: ThetaPoint, params: MarketParams) -> np.ndarray:
    """Allocation direction kappa(theta) = Sigma(rho)^{-1} b."""
    cov = covariance_from(theta.rho, params)
    return cov.solve(theta.b)


def risk_premium_gradients(theta: ThetaPoint, params: MarketParams):
    """First partial derivatives of R at theta, ordered like (b, rho vector).

    dR/db_i = 2 kappa_i and dR/drho_ij = -2 sigma_i sigma_j kappa_i kappa_j.
    A rho coordinate controls both symmetric entries of the correlation
    matrix, hence the factor 2 (central finite differences confirm it);
    conventions that differentiate with respect to a single matrix entry
    report half this value.  Only the sign pattern matters to the
    optimality conditions, so either convention selects the same minimizer.
    """
    kappa = variance_risk_ratio(theta, params)
    grad_b = 2.0 * kappa
    scaled = params.sigmas * kappa
    d = params.d
    grad_rho = np.array([-2.0 * scaled[i] * scaled[j] for i, j in pair_indices(d)])
    return grad_b, grad_rho


def saddle_value(b, rho, theta_star: ThetaPoint, params: MarketParams) -> float:
    """Bilinear value b' Sigma(rho*)^{-1} Sigma(rho) Sigma(rho*)^{-1} b*.

    At (b*, rho*) this equals the minimal risk premium; the worst-case pair
    is a saddle point of this function over the ambiguity set.
    """
    cov_star = covariance_from(theta_star.rho, params)
    left = cov_star.solve(np.asarray(b, dtype=float))
    right = cov_star.solve(theta_star.b)
    sigma = covariance_from(rho, params).matrix
    return float(left @ sigma @ right)


@dataclass(frozen=True)
class SharpeProfile:
    """Per-asset Sharpe ratios and their pairwise proximities.

    betas        b_i / sigma_i in input order
    order        permutation sorting |beta| in stable descending order
    proximities  beta_sorted[j] / beta_sorted[i] for pairs i < j in the
                 sorted frame (0 whenever the denominator beta is 0)
    zero_drift   True when every beta is zero
    """

    betas: np.ndarray
    order: np.ndarray
    proximities: np.ndarray
    zero_drift: bool

    @property
    def sorted_betas(self) -> np.ndarray:
        return self.betas[self.order]


def sharpe_profile(b_hat, params: MarketParams) -> SharpeProfile:
    """Sharpe ratios of b_hat with the descending-|beta| sort applied."""
    b_hat = np.atleast_1d(np.asarray(b_hat, dtype=float))
    if b_hat.shape != (params.d,):
        raise ValueError(f"b_hat must have length {params.d}")
    betas = b_hat / params.sigmas
    order = np.argsort(-np.abs(betas), kind="stable")
    sorted_betas = betas[order]
    d = params.d
    prox = np.zeros(n_pairs(d))
    for k, (i, j) in enumerate(pair_indices(d)):
        prox[k] = sorted_betas[j] / sorted_betas[i] if sorted_betas[i] != 0.0 else 0.0
    betas.flags.writeable = False
    order.flags.writeable = False
    prox.flags.writeable = False
    return SharpeProfile(
        betas=betas,
        order=order,
        proximities=prox,
        zero_drift=bool(np.all(betas == 0.0)),
    )
