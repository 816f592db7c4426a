"""Closed-form worst cases vs the brute-force oracle, numerics, saddle checks."""

import numpy as np
import pytest

from robustmv import (
    EllipsoidalSet,
    GammaBox,
    MarketParams,
    NoMinimum,
    ProductSet,
    SaddleViolated,
    ThetaPoint,
    ZeroDrift,
    contains,
    grid_oracle,
    is_positive_definite,
    numeric_minimize,
    risk_premium,
    solve,
    solve_ellipsoidal_given_rho,
    solve_full_ambiguity,
    solve_three_asset,
    solve_two_asset,
    variance_risk_ratio,
    verify_saddle,
)
from robustmv import solver as solver_mod
from robustmv.errors import BoxNotPositiveDefinite, GridTooLarge

from conftest import (
    CURATED_THREE_ASSET,
    curated_three_asset,
    random_three_asset_instance,
    random_two_asset_instance,
)

# Frozen from the explicit 2x2 inverse oracle (see conftest.premium_2x2).
TWO_ASSET_CASE2_RSTAR = 0.095293633286485616
TWO_ASSET_CASE3_RSTAR = 0.09187742251701457
# Frozen from the equicorrelation inverse oracle.
THREE_CASE5I_RSTAR = 0.22480286800506238
THREE_CASE2I_RSTAR = 0.17989679105308287


def test_shrinkage_given_rho(params2):
    # s = 0.4 from the 2x2 inverse oracle at rho = 0.5
    b_star, r_star = solve_ellipsoidal_given_rho([0.5], [0.4, 0.2], 0.1, params2)
    assert np.allclose(b_star, [0.3, 0.15])
    assert np.isclose(r_star, 0.09)

    b_star, r_star = solve_ellipsoidal_given_rho([0.5], [0.4, 0.2], 0.0, params2)
    assert np.allclose(b_star, [0.4, 0.2])
    assert np.isclose(r_star, 0.16)

    b_star, r_star = solve_ellipsoidal_given_rho([0.5], [0.4, 0.2], 0.5, params2)
    assert np.array_equal(b_star, [0.0, 0.0]) and r_star == 0.0


def test_full_ambiguity_example(params3):
    sol = solve_full_ambiguity([0.5, 0.3, 0.2], 0.2, params3)
    assert np.allclose(sol.theta_star.rho, [0.6, 0.4, 0.24])
    assert np.allclose(sol.theta_star.b, [0.3, 0.18, 0.12])
    assert np.isclose(sol.r_star, 0.09)
    assert is_positive_definite(sol.theta_star.rho, 3)
    assert not sol.no_trade


def test_full_ambiguity_matches_wide_box_minimum(params3):
    # independent check: inf over a wide PD box equals beta_1^2 at delta=0
    sol = solve_full_ambiguity([0.5, 0.3, 0.2], 0.0, params3)
    spec = EllipsoidalSet(b_hat=np.array([0.5, 0.3, 0.2]), delta=0.0, gamma=GammaBox.full(3))
    oracle = grid_oracle(spec, params3, 61)
    assert np.isclose(sol.r_star, 0.25)
    assert abs(oracle.r_star - sol.r_star) < 1e-3


def test_full_ambiguity_no_minimum(params2):
    with pytest.raises(NoMinimum):
        solve_full_ambiguity([0.4, 0.4], 0.1, params2)


def test_full_ambiguity_no_trade(params3):
    sol = solve_full_ambiguity([0.5, 0.3, 0.2], 0.6, params3)
    assert sol.no_trade
    assert sol.r_star == 0.0
    assert np.array_equal(sol.theta_star.b, np.zeros(3))


def test_full_ambiguity_zero_drift(params2):
    with pytest.raises(ZeroDrift):
        solve_full_ambiguity([0.0, 0.0], 0.1, params2)


def test_full_ambiguity_unsorted_inputs():
    # dominant asset listed second; outputs must come back in input order
    p = MarketParams(sigmas=[1.0, 1.0, 1.0], horizon_T=1.0, lam=0.5, x0=1.0)
    sol = solve_full_ambiguity([0.3, 0.5, 0.2], 0.2, p)
    assert np.allclose(sol.theta_star.b, [0.18, 0.3, 0.12])
    k = variance_risk_ratio(ThetaPoint(b=[0.3, 0.5, 0.2], rho=sol.theta_star.rho), p)
    assert np.allclose(k, [0.0, 0.5, 0.0], atol=1e-12)


def test_two_asset_three_cases(params2):
    b_hat = np.array([0.4, 0.2])
    case1 = solve_two_asset(
        EllipsoidalSet(b_hat=b_hat, delta=0.1, gamma=GammaBox.box([-0.5], [0.8])), params2
    )
    assert case1.case_label == "TwoAsset.Interior"
    assert np.isclose(case1.theta_star.rho[0], 0.5)
    assert np.isclose(case1.r_star, 0.09)
    assert np.allclose(case1.theta_star.b, [0.3, 0.15])

    case2 = solve_two_asset(
        EllipsoidalSet(b_hat=b_hat, delta=0.1, gamma=GammaBox.box([-0.5], [0.3])), params2
    )
    assert case2.case_label == "TwoAsset.Upper"
    assert np.isclose(case2.theta_star.rho[0], 0.3)
    assert np.isclose(case2.r_star, TWO_ASSET_CASE2_RSTAR, rtol=1e-12)

    case3 = solve_two_asset(
        EllipsoidalSet(b_hat=b_hat, delta=0.1, gamma=GammaBox.box([0.6], [0.8])), params2
    )
    assert case3.case_label == "TwoAsset.Lower"
    assert np.isclose(case3.theta_star.rho[0], 0.6)
    assert np.isclose(case3.r_star, TWO_ASSET_CASE3_RSTAR, rtol=1e-12)


def test_two_asset_agrees_with_grid_oracle():
    rng = np.random.default_rng(101)
    for _ in range(40):
        spec, params = random_two_asset_instance(rng)
        sol = solve_two_asset(spec, params)
        oracle = grid_oracle(spec, params, 2001)
        assert abs(sol.r_star - oracle.r_star) <= 1e-3
        assert contains(spec, sol.theta_star, params)


def test_three_asset_case5i_example(params3):
    spec = EllipsoidalSet(
        b_hat=np.array([0.5, 0.3, 0.2]), delta=0.1, gamma=GammaBox.box([0, 0, 0], [0.1, 0.1, 0.1])
    )
    sol = solve_three_asset(spec, params3)
    assert sol.case_label == "ThreeAsset.Case5i"
    assert np.allclose(sol.theta_star.rho, [0.1, 0.1, 0.1])
    assert np.isclose(sol.r_star, THREE_CASE5I_RSTAR, rtol=1e-12)
    kappa = variance_risk_ratio(ThetaPoint(b=[0.5, 0.3, 0.2], rho=sol.theta_star.rho), params3)
    assert np.all(kappa > 0)


def test_three_asset_case2i_example(params3):
    spec = EllipsoidalSet(
        b_hat=np.array([0.5, 0.3, 0.2]),
        delta=0.1,
        gamma=GammaBox.box([0, -0.5, -0.5], [0.3, 0.5, 0.5]),
    )
    sol = solve_three_asset(spec, params3)
    assert sol.case_label == "ThreeAsset.Case2i"
    assert np.isclose(sol.theta_star.rho[0], 0.3)
    assert np.isclose(sol.r_star, THREE_CASE2I_RSTAR, rtol=1e-12)
    # the killed component really vanishes, and the root point solves the line
    kappa = variance_risk_ratio(ThetaPoint(b=[0.5, 0.3, 0.2], rho=sol.theta_star.rho), params3)
    assert abs(kappa[2]) < 1e-8
    r13, r23 = sol.theta_star.rho[1], sol.theta_star.rho[2]
    assert abs(0.2 - 0.45054945054945056 * r13 - 0.16483516483516483 * r23) < 1e-12


def test_three_asset_case1_reduces_to_top_sharpe(params3):
    spec = EllipsoidalSet(
        b_hat=np.array([0.5, 0.3, 0.2]),
        delta=0.1,
        gamma=GammaBox.box([0.5, 0.3, -0.2], [0.7, 0.5, 0.2]),
    )
    sol = solve_three_asset(spec, params3)
    assert sol.case_label == "ThreeAsset.Case1"
    assert np.isclose(sol.theta_star.rho[0], 0.6)
    assert np.isclose(sol.theta_star.rho[1], 0.4)
    assert np.isclose(sol.r_star, (0.5 - 0.1) ** 2)


def test_three_asset_curated_cases_match_oracle():
    for label in sorted(CURATED_THREE_ASSET):
        spec, params = curated_three_asset(label)
        sol = solve_three_asset(spec, params)
        assert sol.case_label == label
        oracle = grid_oracle(spec, params, 51)
        assert abs(sol.r_star - oracle.r_star) <= 5e-3, label
        assert contains(spec, sol.theta_star, params), label
        assert is_positive_definite(sol.theta_star.rho, 3), label


def test_three_asset_zeroed_component_vanishes():
    for label in ("ThreeAsset.Case2i", "ThreeAsset.Case2ii", "ThreeAsset.Case3i",
                  "ThreeAsset.Case3ii", "ThreeAsset.Case4i", "ThreeAsset.Case4ii"):
        spec, params = curated_three_asset(label)
        sol = solve_three_asset(spec, params)
        assert sol.diagnostics["zero_component_residual"] < 1e-8, label


def test_three_asset_case_exclusive_away_from_boundaries():
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 60:
        spec, params = random_three_asset_instance(rng)
        if spec is None:
            continue
        try:
            sol = solve_three_asset(spec, params)
        except ZeroDrift:
            continue
        matches = sol.diagnostics.get("all_matches")
        if matches is None:
            continue
        assert len(matches) == 1, (matches, spec)
        checked += 1


def test_three_asset_rejects_non_pd_box(params3):
    gamma = GammaBox.box([0.85, 0.85, -0.9], [0.9, 0.9, -0.8])  # corners violate PD
    spec = EllipsoidalSet(b_hat=np.array([0.5, 0.3, 0.2]), delta=0.1, gamma=gamma)
    with pytest.raises(BoxNotPositiveDefinite):
        solve_three_asset(spec, params3)


def test_three_asset_permutation_equivariance():
    # permuting the assets must permute the solution accordingly
    spec, params = curated_three_asset("ThreeAsset.Case2i")
    base = solve_three_asset(spec, params)
    perm = [2, 0, 1]
    sig_p = params.sigmas[perm]
    b_p = spec.b_hat[perm]
    from robustmv.market import pair_position

    lo, hi = np.zeros(3), np.zeros(3)
    for i in range(3):
        for j in range(i + 1, 3):
            a, c = sorted((perm[i], perm[j]))
            lo[pair_position(i, j, 3)] = spec.gamma.lower[pair_position(a, c, 3)]
            hi[pair_position(i, j, 3)] = spec.gamma.upper[pair_position(a, c, 3)]
    params_p = MarketParams(sigmas=sig_p, horizon_T=1.0, lam=0.5, x0=1.0)
    spec_p = EllipsoidalSet(b_hat=b_p, delta=spec.delta, gamma=GammaBox.box(lo, hi))
    other = solve_three_asset(spec_p, params_p)
    assert np.isclose(other.r_star, base.r_star, rtol=1e-10)
    assert np.allclose(other.theta_star.b, base.theta_star.b[perm], atol=1e-12)


def test_solve_product_singleton(params2):
    spec = ProductSet(
        delta_lower=np.array([0.3, 0.2]),
        delta_upper=np.array([0.3, 0.2]),
        gamma=GammaBox.singleton([0.2]),
    )
    sol = solve(spec, params2)
    assert sol.case_label == "Singleton"
    theta = ThetaPoint(b=[0.3, 0.2], rho=[0.2])
    assert sol.r_star == risk_premium(theta, params2)


def test_solve_product_zero_in_box(params2):
    spec = ProductSet(
        delta_lower=np.array([-0.1, -0.2]),
        delta_upper=np.array([0.4, 0.2]),
        gamma=GammaBox.box([-0.5], [0.5]),
    )
    sol = solve(spec, params2)
    assert sol.r_star == 0.0
    assert sol.no_trade
    assert np.array_equal(sol.theta_star.b, np.zeros(2))


def test_solve_product_matches_oracle(params2):
    spec = ProductSet(
        delta_lower=np.array([0.1, 0.1]),
        delta_upper=np.array([0.4, 0.2]),
        gamma=GammaBox.box([-0.5], [0.5]),
    )
    sol = solve(spec, params2)
    oracle = grid_oracle(spec, params2, 201)
    assert abs(sol.r_star - oracle.r_star) <= 1e-4
    assert sol.diagnostics["converged"]
    # variational inequality at the reported point
    from robustmv import risk_premium_gradients

    gb, gr = risk_premium_gradients(sol.theta_star, params2)
    rng = np.random.default_rng(5)
    for _ in range(200):
        b = rng.uniform(spec.delta_lower, spec.delta_upper)
        rho = rng.uniform(spec.gamma.lower, spec.gamma.upper)
        if not is_positive_definite(rho, 2):
            continue
        slope = gb @ (b - sol.theta_star.b) + gr @ (rho - sol.theta_star.rho)
        assert slope >= -1e-7


def test_numeric_matches_closed_forms():
    rng = np.random.default_rng(303)
    for _ in range(10):
        spec, params = random_two_asset_instance(rng)
        closed = solve_two_asset(spec, params)
        numeric = numeric_minimize(spec, params, starts=4)
        assert abs(closed.r_star - numeric.r_star) < 1e-6


def test_numeric_singleton_exact(params2):
    spec = EllipsoidalSet(b_hat=np.array([0.4, 0.2]), delta=0.0, gamma=GammaBox.singleton([0.3]))
    numeric = numeric_minimize(spec, params2, starts=2)
    assert np.isclose(numeric.r_star, risk_premium(ThetaPoint(b=[0.4, 0.2], rho=[0.3]), params2))


def test_grid_oracle_semantics(params2):
    spec = EllipsoidalSet(b_hat=np.array([0.4, 0.2]), delta=0.1, gamma=GammaBox.box([-0.5], [0.8]))
    oracle = grid_oracle(spec, params2, 2001)
    assert oracle.case_label == "Oracle"
    assert abs(oracle.theta_star.rho[0] - 0.5) <= 5e-4
    assert oracle.diagnostics["nodes"] == 2001

    singleton = grid_oracle(
        EllipsoidalSet(b_hat=np.array([0.4, 0.2]), delta=0.0, gamma=GammaBox.singleton([0.3])),
        params2,
        5,
    )
    assert np.isclose(singleton.theta_star.rho[0], 0.3)

    with pytest.raises(GridTooLarge):
        grid_oracle(
            EllipsoidalSet(b_hat=np.zeros(6), delta=0.1, gamma=GammaBox.full(6)),
            MarketParams(sigmas=np.ones(6), horizon_T=1.0, lam=0.5, x0=1.0),
            41,
        )


def test_grid_oracle_skips_non_pd_nodes(params2):
    # resolution 3 over [-1+eps, 1-eps]: endpoints are non-PD at d=2 once delta=0
    spec = EllipsoidalSet(
        b_hat=np.array([0.3, 0.3]), delta=0.0, gamma=GammaBox.box([-0.999], [0.999])
    )
    oracle = grid_oracle(spec, params2, 3)
    assert oracle.diagnostics["feasible_nodes"] == 3  # all PD here, none skipped
    wide = grid_oracle(
        EllipsoidalSet(b_hat=np.array([0.3, 0.2]), delta=0.0, gamma=GammaBox.full(2)), params2, 3
    )
    assert wide.diagnostics["feasible_nodes"] == wide.diagnostics["nodes"]


def test_monotone_in_delta(params2):
    rhos = GammaBox.box([-0.5], [0.3])
    prev = np.inf
    for delta in np.linspace(0.0, 0.6, 25):
        sol = solve_two_asset(
            EllipsoidalSet(b_hat=np.array([0.4, 0.2]), delta=float(delta), gamma=rhos), params2
        )
        assert sol.r_star <= prev + 1e-15
        prev = sol.r_star
    assert prev == 0.0


def test_scale_equivariance(params2):
    spec = EllipsoidalSet(b_hat=np.array([0.4, 0.2]), delta=0.1, gamma=GammaBox.box([-0.5], [0.3]))
    base = solve_two_asset(spec, params2)
    for t in (0.5, 2.0, 7.0):
        scaled = solve_two_asset(
            EllipsoidalSet(b_hat=t * np.array([0.4, 0.2]), delta=t * 0.1, gamma=spec.gamma),
            params2,
        )
        assert np.isclose(np.sqrt(scaled.r_star), t * np.sqrt(base.r_star), rtol=1e-12)
        assert np.allclose(scaled.theta_star.rho, base.theta_star.rho)


def test_verify_saddle_pass_and_negative_control(params2, reference_spec):
    sol = solve(reference_spec, params2)
    report = verify_saddle(sol, reference_spec, params2, samples=500, seed=21)
    assert report.ok
    assert report.worst_upper_margin <= 1e-8
    assert report.worst_lower_margin >= -1e-8

    # deliberately wrong correlation: inequalities must break
    bad = solver_mod.WorstCaseSolution(
        theta_star=ThetaPoint(b=sol.theta_star.b, rho=[0.0]),
        r_star=sol.r_star,
        case_label="Numeric",
        no_trade=False,
    )
    with pytest.raises(SaddleViolated):
        verify_saddle(bad, reference_spec, params2, samples=500, seed=21)


def test_verify_saddle_singleton_margins_zero(params2):
    spec = ProductSet(
        delta_lower=np.array([0.3, 0.2]),
        delta_upper=np.array([0.3, 0.2]),
        gamma=GammaBox.singleton([0.2]),
    )
    sol = solve(spec, params2)
    report = verify_saddle(sol, spec, params2, samples=50, seed=1)
    assert abs(report.worst_upper_margin) < 1e-12
    assert abs(report.worst_lower_margin) < 1e-12


def test_solve_dispatcher_one_asset():
    p1 = MarketParams(sigmas=[2.0], horizon_T=1.0, lam=0.5, x0=1.0)
    spec = EllipsoidalSet(b_hat=np.array([0.5]), delta=0.1, gamma=GammaBox.box([], []))
    sol = solve(spec, p1)
    assert sol.case_label == "OneAsset"
    assert np.isclose(sol.r_star, (0.25 - 0.1) ** 2)


def test_solve_dispatcher_zero_drift(params2):
    spec = EllipsoidalSet(b_hat=np.zeros(2), delta=0.1, gamma=GammaBox.box([-0.5], [0.5]))
    with pytest.raises(ZeroDrift):
        solve(spec, params2)


def test_no_trade_threshold_flip(params2, reference_spec):
    # threshold = 0.4 at the interior worst case
    for delta, expect in ((0.4 - 1e-9, False), (0.4 + 1e-9, True)):
        sol = solve_two_asset(
            EllipsoidalSet(b_hat=reference_spec.b_hat, delta=delta, gamma=reference_spec.gamma),
            params2,
        )
        assert sol.no_trade is expect
