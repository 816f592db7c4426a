"""Monte-Carlo verification of the wealth dynamics and optimality conditions.

Two simulators for the self-financed wealth process dX = alpha'(b dt +
sigma(rho) dW) under piecewise-constant parameter scenarios:

* an Euler scheme that replays any feedback rule step by step, and
* an exact scheme for the optimal wealth, which is a deterministic affine
  map of a lognormal factor and therefore free of discretization error.

On top of those: the mean-variance objective estimator with a delta-method
standard error, a sampled check of the two optimality-principle conditions
(the value process built from the solved instance must drift the right way
under probe strategies and probe scenarios), and the closed-form table
showing that the one-sided monotonicity genuinely fails for distant drift
scenarios while the terminal inequality survives.

Reproducibility: paths are generated in fixed-size blocks, each block from
its own counter-based substream keyed by (seed, block index).  Results are
bitwise identical for a given SimConfig regardless of the worker count;
the ROBUSTMV_THREADS environment variable only caps parallelism.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ambiguity import AmbiguitySpec, EllipsoidalSet, ThetaProcessSchedule
from .ambiguity import contains, project_b, project_rho
from .errors import PrincipleViolated
from .market import MarketParams, ThetaPoint, covariance_from, risk_premium, variance_risk_ratio
from .solver import WorstCaseSolution
from .strategy import FeedbackStrategy, evaluate_alpha, robust_strategy, value_coefficients, value_v0

BLOCK = 4096


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo run parameters; dt = horizon / n_steps."""

    n_paths: int
    n_steps: int
    seed: int
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def _block_rng(seed: int, block: int) -> np.random.Generator:
    """Independent substream for one block of paths; layout is fixed by (seed, block)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(block,))))


def _block_ranges(n_paths: int):
    return [(start, min(start + BLOCK, n_paths)) for start in range(0, n_paths, BLOCK)]


def _n_workers() -> int:
    raw = os.environ.get("ROBUSTMV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_blocks(n_paths: int, worker):
    """Apply worker(block_index, start, stop) to every block, optionally threaded."""
    ranges = _block_ranges(n_paths)
    workers = _n_workers()
    if workers == 1 or len(ranges) == 1:
        for k, (start, stop) in enumerate(ranges):
            worker(k, start, stop)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(worker, k, start, stop) for k, (start, stop) in enumerate(ranges)
            ]
            for f in futures:
                f.result()


def _normals(rng, lanes: int, d: int, antithetic: bool) -> np.ndarray:
    """One step of standard normals; antithetic pairs adjacent lanes as +/-z."""
    if not antithetic:
        return rng.standard_normal((lanes, d))
    half = (lanes + 1) // 2
    z = rng.standard_normal((half, d))
    out = np.empty((2 * half, d))
    out[0::2] = z
    out[1::2] = -z
    return out[:lanes]


def _as_alpha_fn(strategy_or_fn):
    if isinstance(strategy_or_fn, FeedbackStrategy):
        return lambda t, x: evaluate_alpha(strategy_or_fn, t, x)
    return strategy_or_fn


def _step_model(schedule: ThetaProcessSchedule, params: MarketParams, n_steps: int):
    """Per-step (b, chol) taken from the scenario value at the left node."""
    dt = params.horizon_T / n_steps
    drifts, chols = [], []
    for n in range(n_steps):
        theta = schedule.value_at(n * dt)
        drifts.append(theta.b)
        chols.append(covariance_from(theta.rho, params).chol)
    return dt, drifts, chols


def simulate_wealth(
    strategy_or_fn,
    schedule: ThetaProcessSchedule,
    params: MarketParams,
    cfg: SimConfig,
):
    """Euler paths of the wealth process under a feedback rule.

    The rule is re-evaluated at every step from the current wealth.
    Returns (t_grid, paths) with paths of shape (n_paths, n_steps + 1);
    wealth is unconstrained and may go negative.
    """
    alpha_fn = _as_alpha_fn(strategy_or_fn)
    dt, drifts, chols = _step_model(schedule, params, cfg.n_steps)
    sqrt_dt = math.sqrt(dt)
    t_grid = np.linspace(0.0, params.horizon_T, cfg.n_steps + 1)
    paths = np.empty((cfg.n_paths, cfg.n_steps + 1))
    d = params.d

    def worker(block, start, stop):
        rng = _block_rng(cfg.seed, block)
        lanes = stop - start
        x = np.full(lanes, float(params.x0))
        paths[start:stop, 0] = x
        for n in range(cfg.n_steps):
            z = _normals(rng, lanes, d, cfg.antithetic)
            alpha = np.atleast_2d(alpha_fn(t_grid[n], x))
            shock = z @ chols[n].T
            x = x + (alpha @ drifts[n]) * dt + sqrt_dt * np.einsum("ij,ij->i", alpha, shock)
            paths[start:stop, n + 1] = x

    _run_blocks(cfg.n_paths, worker)
    return t_grid, paths


@dataclass(frozen=True)
class MartingaleStats:
    """Per-step sample mean and standard error of the exponential-factor ratios."""

    mean_ratio: np.ndarray
    se_ratio: np.ndarray


def _exact_step_integrals(solution, schedule, params, n_steps):
    """Exact per-step integrals of the drift and variance rates of log N.

    Within each scenario piece the optimal-wealth factor N is lognormal;
    rates are integrated piecewise so steps may straddle breakpoints.
    """
    theta_star = solution.theta_star
    kappa_star = variance_risk_ratio(theta_star, params)
    pieces = []
    for t0, t1, theta in schedule.pieces(params.horizon_T):
        sigma = covariance_from(theta.rho, params).matrix
        var_rate = float(kappa_star @ sigma @ kappa_star)
        drift_rate = float(theta.b @ kappa_star) + 0.5 * var_rate
        pieces.append((t0, t1, drift_rate, var_rate))
    dt = params.horizon_T / n_steps
    drift_int = np.zeros(n_steps)
    var_int = np.zeros(n_steps)
    for n in range(n_steps):
        a, b = n * dt, (n + 1) * dt
        for t0, t1, drift_rate, var_rate in pieces:
            overlap = max(0.0, min(b, t1) - max(a, t0))
            if overlap > 0.0:
                drift_int[n] += drift_rate * overlap
                var_int[n] += var_rate * overlap
    return drift_int, var_int


def simulate_optimal_exact(
    solution: WorstCaseSolution,
    schedule: ThetaProcessSchedule,
    params: MarketParams,
    cfg: SimConfig,
    martingale_stats: bool = False,
):
    """Discretization-free paths of the optimal wealth process.

    The optimal wealth is x0 + e^{r* T}/(2 lam) (1 - N_t) where log N has
    exact Gaussian increments under any piecewise-constant scenario.  With
    martingale_stats=True also returns per-step statistics of the
    associated exponential-martingale ratios, whose mean must be 1.
    """
    drift_int, var_int = _exact_step_integrals(solution, schedule, params, cfg.n_steps)
    vol_int = np.sqrt(var_int)
    factor = math.exp(solution.r_star * params.horizon_T) / (2.0 * params.lam)
    t_grid = np.linspace(0.0, params.horizon_T, cfg.n_steps + 1)
    paths = np.empty((cfg.n_paths, cfg.n_steps + 1))
    ratio_sum = np.zeros(cfg.n_steps)
    ratio_sq = np.zeros(cfg.n_steps)

    def worker(block, start, stop):
        rng = _block_rng(cfg.seed, block)
        lanes = stop - start
        log_n = np.zeros(lanes)
        paths[start:stop, 0] = params.x0
        local_sum = np.zeros(cfg.n_steps)
        local_sq = np.zeros(cfg.n_steps)
        for n in range(cfg.n_steps):
            xi = _normals(rng, lanes, 1, cfg.antithetic)[:, 0]
            gaussian = vol_int[n] * xi
            log_n = log_n - drift_int[n] - gaussian
            paths[start:stop, n + 1] = params.x0 + factor * (1.0 - np.exp(log_n))
            if martingale_stats:
                ratios = np.exp(-2.0 * var_int[n] - 2.0 * gaussian)
                local_sum[n] = ratios.sum()
                local_sq[n] = (ratios**2).sum()
        if martingale_stats:
            ratio_sum[:] += local_sum
            ratio_sq[:] += local_sq

    # Accumulation into shared vectors is order-independent only if blocks
    # do not interleave; keep the stats path single-threaded.
    if martingale_stats:
        for k, (start, stop) in enumerate(_block_ranges(cfg.n_paths)):
            worker(k, start, stop)
    else:
        _run_blocks(cfg.n_paths, worker)

    if not martingale_stats:
        return t_grid, paths
    n = cfg.n_paths
    mean = ratio_sum / n
    var = np.maximum(ratio_sq / n - mean**2, 0.0) * n / (n - 1)
    stats = MartingaleStats(mean_ratio=mean, se_ratio=np.sqrt(var / n))
    return t_grid, paths, stats


def summarize_paths(t_grid, paths):
    """Per-node summary rows (t, mean, var, se), ready for CSV emission."""
    n = paths.shape[0]
    means = paths.mean(axis=0)
    variances = paths.var(axis=0, ddof=1)
    ses = np.sqrt(variances / n)
    return [
        {"t": float(t), "mean": float(m), "var": float(v), "se": float(s)}
        for t, m, v, s in zip(t_grid, means, variances, ses)
    ]


@dataclass(frozen=True)
class ObjectiveEstimate:
    """Sample mean-variance objective J = E[X_T] - lam Var(X_T) with its error bar."""

    mean_XT: float
    var_XT: float
    J: float
    std_error_J: float
    n_paths: int


def estimate_objective(paths_or_xt, params: MarketParams) -> ObjectiveEstimate:
    """Unbiased mean/variance of terminal wealth and the delta-method SE of J.

    The SE combines the errors of the mean and variance estimators with
    J's gradient (1, -lam).
    """
    arr = np.asarray(paths_or_xt, dtype=float)
    xt = arr[:, -1] if arr.ndim == 2 else arr
    n = xt.size
    if n < 2:
        raise ValueError("need at least two paths")
    mean = float(np.mean(xt))
    centered = xt - mean
    var = float(centered @ centered) / (n - 1)
    m4 = float(np.mean(centered**4))
    var_of_var = max(m4 - (n - 3) / (n - 1) * var**2, 0.0) / n
    se = math.sqrt(var / n + params.lam**2 * var_of_var)
    return ObjectiveEstimate(
        mean_XT=mean,
        var_XT=var,
        J=mean - params.lam * var,
        std_error_J=se,
        n_paths=n,
    )


def default_probe_strategies(strategy: FeedbackStrategy):
    """Eight named strategy probes: scalings, sign flip, component shuffle, static."""
    direction = strategy.allocation_direction

    def scaled(c):
        return lambda t, x: c * evaluate_alpha(strategy, t, x)

    def reversed_rule(t, x):
        mult = np.atleast_1d(strategy.wealth_multiplier(x))
        return mult[:, None] * direction[::-1][None, :]

    def static_rule(t, x):
        n = np.atleast_1d(np.asarray(x)).size
        return np.broadcast_to(direction, (n, direction.size))

    return [
        ("optimal", scaled(1.0)),
        ("zero", scaled(0.0)),
        ("half", scaled(0.5)),
        ("one_and_half", scaled(1.5)),
        ("double", scaled(2.0)),
        ("contrarian", scaled(-1.0)),
        ("reversed", reversed_rule),
        ("static", static_rule),
    ]


def default_probe_schedules(
    spec: AmbiguitySpec,
    params: MarketParams,
    solution: WorstCaseSolution,
):
    """Eight named scenario probes: worst case, center, extreme corners, a switch."""
    lower, upper = spec.gamma.bounds()
    mid_rho = project_rho(spec, 0.5 * (lower + upper))
    corner_rhos = [("low_corr", project_rho(spec, lower)), ("high_corr", project_rho(spec, upper))]

    def feasible_b(b, rho):
        return project_b(spec, b, rho, params)

    if isinstance(spec, EllipsoidalSet):
        center_b = spec.b_hat.copy()

        def extremes(rho):
            s = math.sqrt(risk_premium(ThetaPoint(b=spec.b_hat, rho=rho), params))
            if s == 0.0:
                return [spec.b_hat.copy(), spec.b_hat.copy()]
            outward = spec.b_hat * (1.0 + spec.delta / s)
            inward = spec.b_hat * (1.0 - spec.delta / s)
            return [feasible_b(outward, rho), feasible_b(inward, rho)]

    else:
        center_b = 0.5 * (spec.delta_lower + spec.delta_upper)

        def extremes(rho):
            return [spec.delta_upper.copy(), spec.delta_lower.copy()]

    center = ThetaPoint(b=feasible_b(center_b, mid_rho), rho=mid_rho)
    probes = [
        ("worst_case", ThetaProcessSchedule.constant(solution.theta_star)),
        ("center", ThetaProcessSchedule.constant(center)),
    ]
    for name, rho in corner_rhos:
        outer, inner = extremes(rho)
        probes.append((f"{name}_outer_drift", ThetaProcessSchedule.constant(ThetaPoint(b=outer, rho=rho))))
        probes.append((f"{name}_inner_drift", ThetaProcessSchedule.constant(ThetaPoint(b=inner, rho=rho))))
    switch_target = probes[-2][1].values[0]
    probes.append(
        (
            "switch_mid_horizon",
            ThetaProcessSchedule(
                breakpoints=np.array([0.0, params.horizon_T / 2.0]),
                values=(center, switch_target),
            ),
        )
    )
    probes.append(("revisit_worst", ThetaProcessSchedule.constant(solution.theta_star)))
    feasible = [(name, sched) for name, sched in probes if all(contains(spec, th, params) for th in sched.values)]
    return feasible[:8]


@dataclass(frozen=True)
class ProbeCheck:
    """Outcome of one probe: the margin that had to stay on the right side."""

    name: str
    margin: float
    allowance: float
    ok: bool


@dataclass(frozen=True)
class WeakPrincipleReport:
    """Sampled verification of the two optimality-principle conditions.

    monotone_under_worst_case: for each probe strategy, the largest upward
    step of t -> E[V_t] under the worst-case scenario (must not exceed its
    noise allowance).  terminal_gain: for each probe scenario, E[V_T] - V0
    (must not fall below minus its allowance).  The J rows restate the
    saddle property at the objective level.
    """

    monotone_under_worst_case: tuple
    terminal_gain: tuple
    objective_upper: tuple
    objective_lower: tuple
    value_v0: float
    ok: bool


def _monotonicity_check(paths, t_grid, coeffs, n_sigma=3.0):
    """Largest noise-adjusted increase of E[V_t] along the grid.

    Uses per-path linearization of consecutive value differences, so the
    standard error accounts for the coupling between grid nodes.
    """
    quad = coeffs.quad_coeff(t_grid)
    offset = coeffs.offset(t_grid)
    means = paths.mean(axis=0)
    centered = paths - means[None, :]
    per_path = quad[None, 1:] * centered[:, 1:] ** 2 - quad[None, :-1] * centered[:, :-1] ** 2
    per_path = per_path + np.diff(paths, axis=1)
    diffs = per_path.mean(axis=0) + np.diff(offset)
    n = paths.shape[0]
    se = per_path.std(axis=0, ddof=1) / math.sqrt(n)
    excess = diffs - n_sigma * se
    worst = int(np.argmax(excess))
    return float(diffs[worst]), float(n_sigma * se[worst])


def verify_weak_principle(
    solution: WorstCaseSolution,
    spec: AmbiguitySpec,
    params: MarketParams,
    cfg: SimConfig,
    probe_strategies=None,
    probe_schedules=None,
    n_sigma: float = 3.0,
) -> WeakPrincipleReport:
    """Monte-Carlo check of the optimality-principle conditions.

    Condition (monotone): under the worst-case scenario, t -> E[V_t] is
    nonincreasing for every probe strategy.  Condition (terminal): under
    every probe scenario, the optimal rule satisfies E[V_T] >= V0.  Both
    are tested up to n_sigma standard errors.  Raises PrincipleViolated on
    the first failure.
    """
    strategy = robust_strategy(solution, params)
    coeffs = value_coefficients(solution, params)
    v0 = value_v0(solution, params)
    if probe_strategies is None:
        probe_strategies = default_probe_strategies(strategy)
    if probe_schedules is None:
        probe_schedules = default_probe_schedules(spec, params, solution)
    worst_case = ThetaProcessSchedule.constant(solution.theta_star)

    monotone, j_upper = [], []
    for name, fn in probe_strategies:
        t_grid, paths = simulate_wealth(fn, worst_case, params, cfg)
        increase, allowance = _monotonicity_check(paths, t_grid, coeffs, n_sigma)
        check = ProbeCheck(name=name, margin=increase, allowance=allowance, ok=increase <= allowance)
        monotone.append(check)
        if not check.ok:
            raise PrincipleViolated(
                f"E[V_t] increases by {increase:.3e} (> {allowance:.3e}) under probe strategy {name!r}",
                probe=name,
                margin=increase,
            )
        est = estimate_objective(paths, params)
        margin = est.J - v0
        allowance_j = n_sigma * est.std_error_J
        check_j = ProbeCheck(name=name, margin=margin, allowance=allowance_j, ok=margin <= allowance_j)
        j_upper.append(check_j)
        if not check_j.ok:
            raise PrincipleViolated(
                f"J({name}, worst case) exceeds V0 by {margin:.3e} (> {allowance_j:.3e})",
                probe=name,
                margin=margin,
            )

    terminal, j_lower = [], []
    for name, sched in probe_schedules:
        _, paths = simulate_wealth(strategy, sched, params, cfg)
        est = estimate_objective(paths, params)
        margin = est.J - v0  # E[V_T] - V0 since the terminal value is x - lam (x - xbar)^2
        allowance = n_sigma * est.std_error_J
        check = ProbeCheck(name=name, margin=margin, allowance=allowance, ok=margin >= -allowance)
        terminal.append(check)
        j_lower.append(check)
        if not check.ok:
            raise PrincipleViolated(
                f"E[V_T] - V0 = {margin:.3e} < -{allowance:.3e} under probe scenario {name!r}",
                probe=name,
                margin=margin,
            )

    return WeakPrincipleReport(
        monotone_under_worst_case=tuple(monotone),
        terminal_gain=tuple(terminal),
        objective_upper=tuple(j_upper),
        objective_lower=tuple(j_lower),
        value_v0=v0,
        ok=True,
    )


@dataclass(frozen=True)
class CounterexampleTable:
    """Closed-form derivative of t -> E[V_t] under distant drift scenarios.

    One row per drift-distance parameter c: the direct value implied by the
    requested scenario, then the limit-check values where the derivative is
    provably negative.  limit_target is the c -> infinity pointwise limit.
    """

    t_grid: np.ndarray
    c_values: np.ndarray
    f_values: np.ndarray  # shape (len(c_values), len(t_grid))
    limit_target: np.ndarray
    r_star: float

    def has_negative(self) -> bool:
        return bool(np.any(self.f_values < 0.0))

    def rows(self):
        for c, row in zip(self.c_values, self.f_values):
            yield c, row


def monotonicity_counterexample(
    b_lower: float,
    theta: float,
    params: MarketParams,
    t_grid=None,
    limit_cs=(1e3, 1e4),
) -> CounterexampleTable:
    """Derivative table f(t, c) for the single-asset drift-interval model.

    Requires d = 1 with unit variance.  The worst case is the interval's
    lower end; c = (theta - b_lower) * b_lower measures how far the probe
    scenario sits from it.  f can be positive for moderate c yet converges
    to a strictly negative limit as c grows, which is why the terminal
    condition rather than monotonicity is the right verification device.
    """
    if params.d != 1 or not np.isclose(params.sigmas[0], 1.0):
        raise ValueError("counterexample table requires a single asset with unit variance")
    if not 0.0 <= b_lower <= theta:
        raise ValueError("need 0 <= b_lower <= theta")
    r_star = b_lower**2
    lam, horizon = params.lam, params.horizon_T
    if t_grid is None:
        t_grid = np.linspace(0.0, horizon, 101)
    t = np.asarray(t_grid, dtype=float)
    c_direct = (theta - b_lower) * b_lower
    c_values = np.array([c_direct, *limit_cs])

    def f(tt, c):
        decay = np.exp(-c * tt)
        bracket = c * decay**2 - np.exp(-r_star * tt) * (1.0 - decay) * (
            r_star / 2.0 - (r_star / 2.0 + c) * decay
        )
        return math.exp(r_star * horizon) / (2.0 * lam) * bracket

    f_values = np.vstack([f(t, c) for c in c_values])
    limit_target = -(r_star / (4.0 * lam)) * np.exp(r_star * (horizon - t))
    return CounterexampleTable(
        t_grid=t,
        c_values=c_values,
        f_values=f_values,
        limit_target=limit_target,
        r_star=r_star,
    )
