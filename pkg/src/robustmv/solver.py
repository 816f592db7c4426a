"""Worst-case (drift, correlation) scenarios: closed forms, numerics, oracles.

The robust problem separates: first minimize the risk premium R over the
ambiguity set, then trade as if the minimizer were the true model.  This
module owns the first step.

Closed forms cover the ellipsoidal family:

* any fixed correlation (drift shrinkage toward zero),
* full correlation ambiguity (single surviving asset),
* two assets with a correlation interval (three cases),
* three assets with a correlation box (five exclusive cases).

Product (rectangular) sets and anything without a closed form go through a
projected-gradient fallback, and an exhaustive grid oracle provides
independent ground truth for tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import ambiguity as amb
from .ambiguity import AmbiguitySpec, EllipsoidalSet, GammaBox, ProductSet
from .errors import (
    BoxNotPositiveDefinite,
    GridTooLarge,
    NoMinimum,
    SaddleViolated,
    ZeroDrift,
)
from .market import (
    MarketParams,
    ThetaPoint,
    correlation_matrix,
    is_positive_definite,
    n_pairs,
    pair_indices,
    pair_position,
    risk_premium,
    risk_premium_gradients,
    sharpe_profile,
    variance_risk_ratio,
)

# Case labels reported in WorstCaseSolution.case_label.
SINGLETON = "Singleton"
ONE_ASSET = "OneAsset"
FULL_AMBIGUITY = "FullAmbiguity"
TWO_INTERIOR = "TwoAsset.Interior"
TWO_UPPER = "TwoAsset.Upper"
TWO_LOWER = "TwoAsset.Lower"
THREE_CASE1 = "ThreeAsset.Case1"
THREE_CASE2I = "ThreeAsset.Case2i"
THREE_CASE2II = "ThreeAsset.Case2ii"
THREE_CASE3I = "ThreeAsset.Case3i"
THREE_CASE3II = "ThreeAsset.Case3ii"
THREE_CASE4I = "ThreeAsset.Case4i"
THREE_CASE4II = "ThreeAsset.Case4ii"
THREE_CASE5I = "ThreeAsset.Case5i"
THREE_CASE5II = "ThreeAsset.Case5ii"
THREE_CASE5III = "ThreeAsset.Case5iii"
THREE_CASE5IV = "ThreeAsset.Case5iv"
PRODUCT_NO_TRADE = "Product.NoTrade"
NUMERIC = "Numeric"
ORACLE = "Oracle"

GRID_BUDGET = 10**8
# Points scanned along the zero line of a vanishing allocation component.
ROOT_SCAN_POINTS = 101


@dataclass
class WorstCaseSolution:
    """Minimizer of the risk premium over an ambiguity set.

    theta_star   worst-case (drift, correlation) pair
    r_star       minimal risk premium
    case_label   which closed-form case (or fallback) produced the result
    no_trade     True iff the worst-case drift is identically zero
    diagnostics  solver-specific details (iterations, residuals, grid size)
    """

    theta_star: ThetaPoint
    r_star: float
    case_label: str
    no_trade: bool
    diagnostics: dict = field(default_factory=dict)


def solve_ellipsoidal_given_rho(rho_star, b_hat, delta, params: MarketParams):
    """Worst drift inside the ellipsoid once the correlation is fixed.

    Shrinks the anchor toward zero: b* = (1 - delta/s) b_hat when the
    anchored premium root s = ||sigma(rho*)^{-1} b_hat||_2 exceeds delta,
    else b* = 0; r* = (s - delta)^2 on the same event.
    """
    b_hat = np.atleast_1d(np.asarray(b_hat, dtype=float))
    anchored = risk_premium(ThetaPoint(b=b_hat, rho=rho_star), params)
    s = math.sqrt(anchored)
    if s > delta:
        scale = 1.0 - delta / s
        return scale * b_hat, (s - delta) ** 2
    return np.zeros_like(b_hat), 0.0


def _full_ambiguity_rho(profile, d: int) -> np.ndarray:
    """Worst-case correlation coordinates in the sorted frame.

    First row takes the Sharpe proximities; the remaining pairs use the
    rank-one completion rho_ij = rho_1i * rho_1j, which is positive
    definite whenever |rho_1i| < 1 for every i.
    """
    rho = np.zeros(n_pairs(d))
    first_row = {j: profile.proximities[pair_position(0, j, d)] for j in range(1, d)}
    for i, j in pair_indices(d):
        k = pair_position(i, j, d)
        rho[k] = first_row[j] if i == 0 else first_row[i] * first_row[j]
    return rho


def _unpermute_rho(rho_sorted: np.ndarray, order: np.ndarray, d: int) -> np.ndarray:
    """Map a rho vector from the sorted-asset frame back to input order."""
    inv = np.argsort(order)
    out = np.zeros_like(rho_sorted)
    for i, j in pair_indices(d):
        a, c = sorted((int(inv[i]), int(inv[j])))
        out[pair_position(i, j, d)] = rho_sorted[pair_position(a, c, d)]
    return out


def _permute_box(gamma: GammaBox, order: np.ndarray, d: int):
    """Correlation box bounds expressed in the sorted-asset frame."""
    lower = np.zeros(n_pairs(d))
    upper = np.zeros(n_pairs(d))
    for i, j in pair_indices(d):
        a, c = sorted((int(order[i]), int(order[j])))
        k_orig = pair_position(a, c, d)
        k_sorted = pair_position(i, j, d)
        lower[k_sorted] = gamma.lower[k_orig]
        upper[k_sorted] = gamma.upper[k_orig]
    return lower, upper


def solve_full_ambiguity(b_hat, delta, params: MarketParams) -> WorstCaseSolution:
    """Worst case when the correlation is completely unknown.

    Requires a strictly largest |Sharpe ratio|; otherwise the infimum of
    the premium is not attained and NoMinimum is raised.  The worst-case
    correlation aligns every other asset with the dominant one, so only
    that asset survives in the allocation.
    """
    b_hat = np.atleast_1d(np.asarray(b_hat, dtype=float))
    d = params.d
    profile = sharpe_profile(b_hat, params)
    if profile.zero_drift:
        raise ZeroDrift("all prior expected returns are zero")
    sorted_abs = np.abs(profile.sorted_betas)
    if d > 1 and not sorted_abs[0] > sorted_abs[1]:
        raise NoMinimum(
            "the premium has no minimizer under full correlation ambiguity: "
            "more than one asset attains the largest |Sharpe ratio|"
        )
    rho_sorted = _full_ambiguity_rho(profile, d)
    rho_star = _unpermute_rho(rho_sorted, profile.order, d)
    if not is_positive_definite(rho_star, d):
        raise NoMinimum(
            "worst-case correlation is numerically singular: the two largest "
            "|Sharpe ratios| are too close to distinguish"
        )
    top = float(sorted_abs[0])
    if top > delta:
        b_star = (1.0 - delta / top) * b_hat
        r_star = (top - delta) ** 2
    else:
        b_star = np.zeros_like(b_hat)
        r_star = 0.0
    theta = ThetaPoint(b=b_star, rho=rho_star)
    return WorstCaseSolution(
        theta_star=theta,
        r_star=r_star,
        case_label=FULL_AMBIGUITY,
        no_trade=bool(np.all(b_star == 0.0)),
        diagnostics={"top_sharpe": top, "order": profile.order.tolist()},
    )


def _require_box_ellipsoid(spec, d_expected: int):
    if not isinstance(spec, EllipsoidalSet):
        raise ValueError("this solver handles ellipsoidal ambiguity sets only")
    if spec.gamma.full_ambiguity:
        raise ValueError("use solve_full_ambiguity for full correlation ambiguity")
    if spec.d != d_expected:
        raise ValueError(f"expected d={d_expected}, got d={spec.d}")


def solve_two_asset(spec: EllipsoidalSet, params: MarketParams) -> WorstCaseSolution:
    """Two assets, correlation interval [lo, hi].

    With the Sharpe proximity q = beta_small / beta_large, the worst-case
    correlation is q itself when it lies in the interval (only the dominant
    asset survives), else the nearer interval endpoint.
    """
    _require_box_ellipsoid(spec, 2)
    profile = sharpe_profile(spec.b_hat, params)
    if profile.zero_drift:
        raise ZeroDrift("all prior expected returns are zero")
    lo = float(spec.gamma.lower[0])
    hi = float(spec.gamma.upper[0])
    q = float(profile.proximities[0])
    if lo <= q <= hi:
        rho_star_val, label = q, TWO_INTERIOR
    elif hi < q:
        rho_star_val, label = hi, TWO_UPPER
    else:
        rho_star_val, label = lo, TWO_LOWER
    rho_star = np.array([rho_star_val])
    b_star, r_star = solve_ellipsoidal_given_rho(rho_star, spec.b_hat, spec.delta, params)
    return WorstCaseSolution(
        theta_star=ThetaPoint(b=b_star, rho=rho_star),
        r_star=r_star,
        case_label=label,
        no_trade=bool(np.all(b_star == 0.0)),
        diagnostics={"proximity": q, "order": profile.order.tolist()},
    )


def _reduced_pair(removed: int):
    """Kept asset indices when one of three assets is removed (0-based)."""
    return [j for j in range(3) if j != removed]


def _reduced_kappa(removed: int, rho_pair: float, sigmas, b_hat):
    """Sigma_{-i}(rho_jk)^{-1} b_{-i} for the two kept assets (j, k)."""
    j, k = _reduced_pair(removed)
    sj, sk = sigmas[j], sigmas[k]
    det = (sj * sk) ** 2 * (1.0 - rho_pair**2)
    kj = (sk**2 * b_hat[j] - sj * sk * rho_pair * b_hat[k]) / det
    kk = (sj**2 * b_hat[k] - sj * sk * rho_pair * b_hat[j]) / det
    return kj, kk


def _reduced_premium(removed: int, rho_pair: float, sigmas, b_hat) -> float:
    """b_{-i}' Sigma_{-i}(rho_jk)^{-1} b_{-i}."""
    j, k = _reduced_pair(removed)
    kj, kk = _reduced_kappa(removed, rho_pair, sigmas, b_hat)
    return b_hat[j] * kj + b_hat[k] * kk


def _line_box_segment(coef_x, coef_y, const, box_x, box_y):
    """Endpoints of {coef_x*x + coef_y*y = const} clipped to a rectangle."""
    lx, ux = box_x
    ly, uy = box_y
    scale = max(abs(coef_x), abs(coef_y), abs(const), 1.0)
    tol = 1e-12 * scale
    points = []
    if abs(coef_y) > tol:
        for x in (lx, ux):
            y = (const - coef_x * x) / coef_y
            if ly - 1e-9 <= y <= uy + 1e-9:
                points.append((x, min(max(y, ly), uy)))
    if abs(coef_x) > tol:
        for y in (ly, uy):
            x = (const - coef_y * y) / coef_x
            if lx - 1e-9 <= x <= ux + 1e-9:
                points.append((min(max(x, lx), ux), y))
    if not points:
        return None
    # Order along the line and keep the extreme pair.
    def along(p):
        return -coef_y * p[0] + coef_x * p[1]

    points.sort(key=along)
    return points[0], points[-1]


def _pick_on_segment(segment, build_rho, d):
    """Scan the segment, keep PD candidates, return the one nearest its middle."""
    (x0, y0), (x1, y1) = segment
    ts = np.linspace(0.0, 1.0, ROOT_SCAN_POINTS)
    best = None
    best_dist = np.inf
    for t in ts:
        rho = build_rho(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        if is_positive_definite(rho, d):
            dist = abs(t - 0.5)
            if dist < best_dist:
                best, best_dist = rho, dist
    return best


def _three_asset_case_matches(b_hat, sigmas, lower, upper, params_sorted):
    """All fired closed-form cases for a sorted-frame three-asset instance.

    Returns a list of (label, rho_star, extras); the cases are mutually
    exclusive away from boundaries, so the list normally has one entry.
    Entries whose root segment contains no PD point are skipped.
    """
    l12, l13, l23 = lower
    u12, u13, u23 = upper
    betas = b_hat / sigmas
    q12 = betas[1] / betas[0] if betas[0] != 0.0 else 0.0
    q13 = betas[2] / betas[0] if betas[0] != 0.0 else 0.0
    q23 = betas[2] / betas[1] if betas[1] != 0.0 else 0.0

    def kappa(r12, r13, r23):
        theta = ThetaPoint(b=b_hat, rho=np.array([r12, r13, r23]))
        return variance_risk_ratio(theta, params_sorted)

    matches = []

    # Case 1: both proximities to the top asset inside their intervals.
    if l12 <= q12 <= u12 and l13 <= q13 <= u13:
        free = np.linspace(l23, u23, ROOT_SCAN_POINTS)
        free = free[np.argsort(np.abs(free - 0.5 * (l23 + u23)), kind="stable")]
        rho_star = None
        for r23 in free:
            cand = np.array([q12, q13, r23])
            if is_positive_definite(cand, 3):
                rho_star = cand
                break
        if rho_star is not None:
            matches.append((THREE_CASE1, rho_star, {"zero_components": [1, 2]}))

    # Cases 2-4: one allocation component vanishes on a line inside the box.
    # (fixed pair, fixed value, removed asset, sign corners, free boxes)
    def line_case(label, removed, fixed_pair_pos, fixed_value, corner_a, corner_b, free_x, free_y):
        ka = kappa(*corner_a)[removed]
        kb = kappa(*corner_b)[removed]
        if not ka * kb <= 0.0:
            return
        kj, kk = _reduced_kappa(removed, fixed_value, sigmas, b_hat)
        j, k = _reduced_pair(removed)
        s_rm = sigmas[removed]
        coef_x = sigmas[j] * s_rm * kj
        coef_y = sigmas[k] * s_rm * kk
        const = b_hat[removed]
        segment = _line_box_segment(coef_x, coef_y, const, free_x, free_y)
        if segment is None:
            return

        def build(x, y):
            rho = np.empty(3)
            rho[fixed_pair_pos] = fixed_value
            free_positions = [p for p in range(3) if p != fixed_pair_pos]
            rho[free_positions[0]] = x
            rho[free_positions[1]] = y
            return rho

        rho_star = _pick_on_segment(segment, build, 3)
        if rho_star is not None:
            matches.append(
                (label, rho_star, {"zero_components": [removed], "segment": segment})
            )

    # Case 2: third asset drops out; rho_12 pinned by the two-asset rule.
    if u12 < q12:
        line_case(THREE_CASE2I, 2, 0, u12, (u12, u13, u23), (u12, l13, l23), (l13, u13), (l23, u23))
    if l12 > q12:
        line_case(THREE_CASE2II, 2, 0, l12, (l12, l13, u23), (l12, u13, l23), (l13, u13), (l23, u23))
    # Case 3: second asset drops out; rho_13 pinned.
    if u13 < q13:
        line_case(THREE_CASE3I, 1, 1, u13, (u12, u13, u23), (l12, u13, l23), (l12, u12), (l23, u23))
    if l13 > q13:
        line_case(THREE_CASE3II, 1, 1, l13, (l12, l13, u23), (u12, l13, l23), (l12, u12), (l23, u23))
    # Case 4: first asset drops out; rho_23 pinned.
    if u23 < q23:
        line_case(THREE_CASE4I, 0, 2, u23, (u12, u13, u23), (l12, l13, u23), (l12, u12), (l13, u13))
    if l23 > q23:
        line_case(THREE_CASE4II, 0, 2, l23, (l12, u13, l23), (u12, l13, l23), (l12, u12), (l13, u13))

    # Case 5: nothing vanishes; the minimizer sits at a specific corner.
    for label, corner, want12, want13 in (
        (THREE_CASE5I, (u12, u13, u23), 1, 1),
        (THREE_CASE5II, (l12, l13, u23), -1, -1),
        (THREE_CASE5III, (u12, l13, l23), 1, -1),
        (THREE_CASE5IV, (l12, u13, l23), -1, 1),
    ):
        k = kappa(*corner)
        p12 = k[0] * k[1]
        p13 = k[0] * k[2]
        if (p12 > 0.0 if want12 > 0 else p12 < 0.0) and (p13 > 0.0 if want13 > 0 else p13 < 0.0):
            matches.append((label, np.array(corner), {"zero_components": []}))

    return matches


def solve_three_asset(spec: EllipsoidalSet, params: MarketParams) -> WorstCaseSolution:
    """Three assets, per-pair correlation box, five exclusive cases.

    Cases are tested in order and the first match wins; exclusivity only
    breaks down at numerical boundaries, where the numeric fallback takes
    over with a Numeric label.
    """
    _require_box_ellipsoid(spec, 3)
    profile = sharpe_profile(spec.b_hat, params)
    if profile.zero_drift:
        raise ZeroDrift("all prior expected returns are zero")
    order = profile.order
    sigmas_sorted = params.sigmas[order]
    b_sorted = np.asarray(spec.b_hat)[order]
    lower, upper = _permute_box(spec.gamma, order, 3)
    params_sorted = MarketParams(
        sigmas=sigmas_sorted, horizon_T=params.horizon_T, lam=params.lam, x0=params.x0
    )
    for corner in itertools.product(*zip(lower, upper)):
        if not is_positive_definite(np.array(corner), 3):
            raise BoxNotPositiveDefinite(
                f"correlation box corner {corner} (sorted frame) is not positive definite",
                corner=corner,
            )
    matches = _three_asset_case_matches(b_sorted, sigmas_sorted, lower, upper, params_sorted)
    if not matches:
        fallback = numeric_minimize(spec, params)
        fallback.diagnostics["case_fallthrough"] = True
        return fallback
    label, rho_sorted, extras = matches[0]
    rho_star = _unpermute_rho(rho_sorted, order, 3)
    b_star, r_star = solve_ellipsoidal_given_rho(rho_star, spec.b_hat, spec.delta, params)
    diagnostics = {
        "order": order.tolist(),
        "all_matches": [m[0] for m in matches],
    }
    if extras.get("zero_components"):
        kappa_sorted = variance_risk_ratio(
            ThetaPoint(b=b_sorted, rho=rho_sorted), params_sorted
        )
        diagnostics["zero_component_residual"] = max(
            abs(float(kappa_sorted[i])) for i in extras["zero_components"]
        )
    return WorstCaseSolution(
        theta_star=ThetaPoint(b=b_star, rho=rho_star),
        r_star=r_star,
        case_label=label,
        no_trade=bool(np.all(b_star == 0.0)),
        diagnostics=diagnostics,
    )


def solve_product(spec: ProductSet, params: MarketParams) -> WorstCaseSolution:
    """Rectangular drift box times correlation box.

    Singletons are returned exactly; a drift box containing the origin
    makes the premium vanish; everything else is minimized numerically.
    """
    if spec.is_singleton():
        rho = spec.gamma.lower.copy()
        theta = ThetaPoint(b=spec.delta_lower.copy(), rho=rho)
        r_star = risk_premium(theta, params)
        return WorstCaseSolution(
            theta_star=theta,
            r_star=r_star,
            case_label=SINGLETON,
            no_trade=bool(np.all(theta.b == 0.0)),
            diagnostics={},
        )
    if np.all(spec.delta_lower <= 0.0) and np.all(spec.delta_upper >= 0.0):
        lower, upper = spec.gamma.bounds()
        rho = amb.project_rho(spec, 0.5 * (lower + upper))
        theta = ThetaPoint(b=np.zeros(spec.d), rho=rho)
        return WorstCaseSolution(
            theta_star=theta,
            r_star=0.0,
            case_label=PRODUCT_NO_TRADE,
            no_trade=True,
            diagnostics={},
        )
    return numeric_minimize(spec, params)


def _box_residual(grad, x, lower, upper) -> float:
    """Exact first-order optimality violation over a box feasible set."""
    drop = np.where(grad > 0, grad * (lower - x), grad * (upper - x))
    return float(-np.minimum(drop, 0.0).sum())


def _ellipsoidal_objective(spec: EllipsoidalSet, params: MarketParams):
    b_hat = spec.b_hat
    delta = spec.delta

    def value(rho):
        s = math.sqrt(risk_premium(ThetaPoint(b=b_hat, rho=rho), params))
        return (s - delta) ** 2 if s > delta else 0.0

    def gradient(rho):
        theta = ThetaPoint(b=b_hat, rho=rho)
        s = math.sqrt(risk_premium(theta, params))
        if s <= delta:
            return np.zeros_like(rho)
        _, grad_rho = risk_premium_gradients(theta, params)
        return (1.0 - delta / s) * grad_rho

    return value, gradient


def _projected_descent(value, gradient, project, start, lower, upper, max_iters, tol):
    """Armijo-backtracked projected gradient descent over a box."""
    x = project(start)
    fx = value(x)
    eta = 1.0
    iterations = 0
    residual = np.inf
    for iterations in range(1, max_iters + 1):
        g = gradient(x)
        residual = _box_residual(g, x, lower, upper)
        if residual < tol:
            return x, fx, iterations, residual, True
        while True:
            candidate = project(x - eta * g)
            step = candidate - x
            f_candidate = value(candidate)
            if f_candidate <= fx + 1e-4 * float(g @ step) or eta < 1e-14:
                break
            eta *= 0.5
        if float(np.linalg.norm(step)) < 1e-12:
            break
        x, fx = candidate, f_candidate
        eta = min(eta * 1.5, 1.0)
    g = gradient(x)
    residual = _box_residual(g, x, lower, upper)
    return x, fx, iterations, residual, residual < tol


def numeric_minimize(
    spec: AmbiguitySpec,
    params: MarketParams,
    starts: int = 8,
    max_iters: int = 5000,
    tol: float = 1e-8,
) -> WorstCaseSolution:
    """Projected-gradient minimization of the risk premium over the set.

    Multi-start with deterministic seeds; stops on the exact first-order
    optimality residual for box constraints.  Returns the best point found
    with a convergence flag in the diagnostics rather than raising.
    """
    g_lower, g_upper = spec.gamma.bounds()

    if isinstance(spec, EllipsoidalSet):
        value, gradient = _ellipsoidal_objective(spec, params)
        project = lambda rho: amb.project_rho(spec, rho)
        lower, upper = g_lower, g_upper
        start_points = [0.5 * (g_lower + g_upper)]
        for k in range(max(starts - 1, 0)):
            theta = amb.sample(spec, 1, seed=1000 + k, params=params)[0]
            start_points.append(theta.rho)
    else:
        d = spec.d
        lower = np.concatenate([spec.delta_lower, g_lower])
        upper = np.concatenate([spec.delta_upper, g_upper])

        def value(z):
            return risk_premium(ThetaPoint(b=z[:d], rho=z[d:]), params)

        def gradient(z):
            gb, gr = risk_premium_gradients(ThetaPoint(b=z[:d], rho=z[d:]), params)
            return np.concatenate([gb, gr])

        def project(z):
            b = np.clip(z[:d], spec.delta_lower, spec.delta_upper)
            rho = amb.project_rho(spec, z[d:])
            return np.concatenate([b, rho])

        start_points = [0.5 * (lower + upper)]
        for k in range(max(starts - 1, 0)):
            theta = amb.sample(spec, 1, seed=1000 + k, params=params)[0]
            start_points.append(np.concatenate([theta.b, theta.rho]))

    best = None
    total_iterations = 0
    for idx, start in enumerate(start_points):
        x, fx, iters, residual, converged = _projected_descent(
            value, gradient, project, start, lower, upper, max_iters, tol
        )
        total_iterations += iters
        if best is None or fx < best[1]:
            best = (x, fx, residual, converged, idx)
    x, fx, residual, converged, best_start = best

    if isinstance(spec, EllipsoidalSet):
        rho_star = x
        b_star, r_star = solve_ellipsoidal_given_rho(rho_star, spec.b_hat, spec.delta, params)
    else:
        b_star, rho_star = x[: spec.d], x[spec.d:]
        r_star = fx
    theta = ThetaPoint(b=b_star, rho=rho_star)
    return WorstCaseSolution(
        theta_star=theta,
        r_star=r_star,
        case_label=NUMERIC,
        no_trade=bool(np.all(np.abs(b_star) == 0.0)),
        diagnostics={
            "starts": len(start_points),
            "best_start": best_start,
            "iterations": total_iterations,
            "residual": residual,
            "converged": bool(converged),
        },
    )


def _premium_batch(b, rho, sigmas):
    """Vectorized premium and PD mask, independent of the factorization path.

    Uses explicit inverse formulas (adjugate for d <= 3, batched solve
    otherwise) and Sylvester minors for the PD test, so oracle results do
    not share code with the production triangular-solve route.
    """
    d = len(sigmas)
    b = np.asarray(b, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if b.ndim == 1:
        b = np.broadcast_to(b, (rho.shape[0] if rho.ndim > 1 else 1, d))
    betas = b / np.asarray(sigmas)
    if d == 1:
        n = betas.shape[0]
        return betas[:, 0] ** 2, np.ones(n, dtype=bool)
    if d == 2:
        r = rho[:, 0]
        det = 1.0 - r**2
        mask = det > 1e-12
        safe = np.where(mask, det, 1.0)
        prem = (betas[:, 0] ** 2 + betas[:, 1] ** 2 - 2.0 * r * betas[:, 0] * betas[:, 1]) / safe
        return prem, mask
    if d == 3:
        a, bb, c = rho[:, 0], rho[:, 1], rho[:, 2]
        det = 1.0 + 2.0 * a * bb * c - a**2 - bb**2 - c**2
        mask = (det > 1e-12) & (1.0 - a**2 > 1e-12)
        safe = np.where(mask, det, 1.0)
        b1, b2, b3 = betas[:, 0], betas[:, 1], betas[:, 2]
        quad = (
            b1**2 * (1.0 - c**2)
            + b2**2 * (1.0 - bb**2)
            + b3**2 * (1.0 - a**2)
            + 2.0 * b1 * b2 * (bb * c - a)
            + 2.0 * b1 * b3 * (a * c - bb)
            + 2.0 * b2 * b3 * (a * bb - c)
        )
        return quad / safe, mask
    n = rho.shape[0]
    mats = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    for k, (i, j) in enumerate(pair_indices(d)):
        mats[:, i, j] = rho[:, k]
        mats[:, j, i] = rho[:, k]
    eigs = np.linalg.eigvalsh(mats)
    mask = eigs[:, 0] > 1e-10
    prem = np.ones(n)
    if mask.any():
        sol = np.linalg.solve(mats[mask], betas[mask][:, :, None])[:, :, 0]
        prem_vals = np.einsum("ij,ij->i", betas[mask], sol)
        prem = np.zeros(n)
        prem[mask] = prem_vals
    return prem, mask


def grid_oracle(spec: AmbiguitySpec, params: MarketParams, resolution: int) -> WorstCaseSolution:
    """Exhaustive grid minimization used as ground truth in tests.

    Grids the correlation box (and the drift box for product sets),
    skipping nodes that fail the positive-definite test.  Full correlation
    ambiguity is approximated by the wide box [-0.95, 0.95] per pair.  The
    drift for ellipsoidal sets comes from the fixed-correlation shrinkage
    map at every node.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    d = params.d
    if spec.gamma.full_ambiguity:
        g_lower = np.full(spec.gamma.n_pairs, -0.95)
        g_upper = np.full(spec.gamma.n_pairs, 0.95)
    else:
        g_lower, g_upper = spec.gamma.bounds()

    def axis(lo, hi):
        return np.array([lo]) if lo == hi or resolution == 1 else np.linspace(lo, hi, resolution)

    rho_axes = [axis(lo, hi) for lo, hi in zip(g_lower, g_upper)]
    if isinstance(spec, ProductSet):
        b_axes = [axis(lo, hi) for lo, hi in zip(spec.delta_lower, spec.delta_upper)]
    else:
        b_axes = []
    axes = b_axes + rho_axes
    total = 1
    for ax in axes:
        total *= ax.size
    if total > GRID_BUDGET:
        raise GridTooLarge(f"grid of {total} nodes exceeds the budget of {GRID_BUDGET}")

    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        flat = np.zeros((1, 0))
    n_b = len(b_axes)
    b_grid = flat[:, :n_b] if n_b else np.asarray(spec.b_hat, dtype=float)
    rho_grid = flat[:, n_b:]

    prem, mask = _premium_batch(b_grid, rho_grid, params.sigmas)
    if isinstance(spec, EllipsoidalSet):
        root = np.sqrt(np.maximum(prem, 0.0))
        scores = np.where(root > spec.delta, (root - spec.delta) ** 2, 0.0)
    else:
        scores = prem
    scores = np.where(mask, scores, np.inf)
    k_best = int(np.argmin(scores))
    if not np.isfinite(scores[k_best]):
        raise BoxNotPositiveDefinite("no positive-definite node on the grid")
    rho_star = rho_grid[k_best].copy()
    if isinstance(spec, EllipsoidalSet):
        b_star, r_star = solve_ellipsoidal_given_rho(rho_star, spec.b_hat, spec.delta, params)
    else:
        b_star = b_grid[k_best].copy()
        r_star = float(prem[k_best])
    theta = ThetaPoint(b=b_star, rho=rho_star)
    return WorstCaseSolution(
        theta_star=theta,
        r_star=r_star,
        case_label=ORACLE,
        no_trade=bool(np.all(b_star == 0.0)),
        diagnostics={
            "resolution": resolution,
            "nodes": int(total),
            "feasible_nodes": int(mask.sum()),
        },
    )


@dataclass(frozen=True)
class SaddleReport:
    """Sampled check of the two saddle inequalities around a solution."""

    samples: int
    tol: float
    worst_upper_margin: float  # max over rho draws of H(b*, rho) - r*, need <= tol
    worst_lower_margin: float  # min over b draws of H(b, rho*) - r*, need >= -tol
    ok: bool


def verify_saddle(
    solution: WorstCaseSolution,
    spec: AmbiguitySpec,
    params: MarketParams,
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-8,
) -> SaddleReport:
    """Sample the ambiguity set and test both sides of the saddle inequality.

    Raises SaddleViolated with the offending draw when either side breaks
    beyond the tolerance.
    """
    theta_star = solution.theta_star
    r_star = solution.r_star
    kappa_star = variance_risk_ratio(theta_star, params)
    draws = amb.sample(spec, samples, seed=seed, params=params)
    worst_upper = -np.inf
    worst_lower = np.inf
    sig = params.sigmas
    for theta in draws:
        sigma = correlation_matrix(theta.rho, params.d) * np.outer(sig, sig)
        upper = float(kappa_star @ sigma @ kappa_star) - r_star
        lower = float(theta.b @ kappa_star) - r_star
        if upper > worst_upper:
            worst_upper = upper
            if upper > tol:
                raise SaddleViolated(
                    f"H(b*, rho) exceeds r* by {upper:.3e}",
                    theta=theta,
                    margin=upper,
                )
        if lower < worst_lower:
            worst_lower = lower
            if lower < -tol:
                raise SaddleViolated(
                    f"H(b, rho*) undershoots r* by {-lower:.3e}",
                    theta=theta,
                    margin=lower,
                )
    if samples == 0:
        worst_upper, worst_lower = 0.0, 0.0
    return SaddleReport(
        samples=samples,
        tol=tol,
        worst_upper_margin=worst_upper,
        worst_lower_margin=worst_lower,
        ok=True,
    )


def solve(spec: AmbiguitySpec, params: MarketParams) -> WorstCaseSolution:
    """Route an ambiguity set to its closed form or the numeric fallback."""
    if isinstance(spec, ProductSet):
        return solve_product(spec, params)
    profile = sharpe_profile(spec.b_hat, params)
    if profile.zero_drift:
        raise ZeroDrift("all prior expected returns are zero: never trade")
    if spec.gamma.full_ambiguity:
        return solve_full_ambiguity(spec.b_hat, spec.delta, params)
    d = params.d
    if d == 1:
        rho = np.zeros(0)
        b_star, r_star = solve_ellipsoidal_given_rho(rho, spec.b_hat, spec.delta, params)
        return WorstCaseSolution(
            theta_star=ThetaPoint(b=b_star, rho=rho),
            r_star=r_star,
            case_label=ONE_ASSET,
            no_trade=bool(np.all(b_star == 0.0)),
            diagnostics={},
        )
    if d == 2:
        return solve_two_asset(spec, params)
    if d == 3:
        return solve_three_asset(spec, params)
    return numeric_minimize(spec, params)
