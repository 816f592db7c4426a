"""Command-line interface: solve / classify / simulate / oracle / gradcheck.

One JSON config describes one instance:

    {
      "market":    {"sigmas": [1.0, 1.0], "horizon_T": 1.0, "lambda": 0.5, "x0": 1.0},
      "ambiguity": {"variant": "ellipsoidal", "b_hat": [0.4, 0.2], "delta": 0.1,
                    "gamma": {"lower": [-0.5], "upper": [0.8]}},
      "simulate":  {"n_paths": 100000, "n_steps": 256, "seed": 42, "antithetic": false},
      "output":    {"format": "json", "path": "report.json"}
    }

Product sets use {"variant": "product", "delta_lower": [...], "delta_upper": [...]},
full correlation ambiguity uses "gamma": {"full_ambiguity": true}.  An optional
"sweep" list of {dotted.key: value} overrides produces one CSV row per entry.

Exit codes: 0 success, 1 input error, 2 verification failure, 3 a flagged
mathematical condition (no minimizer / zero drift).
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .ambiguity import EllipsoidalSet, GammaBox, ProductSet, ThetaProcessSchedule
from .errors import (
    ConfigError,
    NoMinimum,
    PrincipleViolated,
    RobustMVError,
    SaddleViolated,
    ZeroDrift,
)
from .market import (
    MarketParams,
    ThetaPoint,
    n_pairs,
    risk_premium_gradients,
    risk_premium,
)
from .simulate import (
    SimConfig,
    default_probe_schedules,
    default_probe_strategies,
    estimate_objective,
    simulate_wealth,
    summarize_paths,
    verify_weak_principle,
)
from .solver import grid_oracle, solve
from .strategy import robust_strategy, strategy_report, value_v0

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_VERIFICATION = 2
EXIT_FLAGGED = 3


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config root must be a JSON object")
    return raw


def parse_market(raw: dict) -> MarketParams:
    _require("market" in raw, "missing 'market' section")
    m = raw["market"]
    for key in ("sigmas", "horizon_T", "lambda", "x0"):
        _require(key in m, f"market section missing '{key}'")
    try:
        return MarketParams(
            sigmas=np.asarray(m["sigmas"], dtype=float),
            horizon_T=float(m["horizon_T"]),
            lam=float(m["lambda"]),
            x0=float(m["x0"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad market parameters: {exc}") from exc


def parse_gamma(raw: dict, d: int) -> GammaBox:
    if raw.get("full_ambiguity"):
        return GammaBox.full(d)
    for key in ("lower", "upper"):
        _require(key in raw, f"gamma section missing '{key}'")
    try:
        box = GammaBox.box(raw["lower"], raw["upper"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad correlation bounds: {exc}") from exc
    _require(box.n_pairs == n_pairs(d), f"gamma bounds must have length {n_pairs(d)} for d={d}")
    return box


def parse_ambiguity(raw: dict, params: MarketParams):
    _require("ambiguity" in raw, "missing 'ambiguity' section")
    a = raw["ambiguity"]
    variant = a.get("variant")
    _require(variant in ("product", "ellipsoidal"), "ambiguity variant must be 'product' or 'ellipsoidal'")
    gamma = parse_gamma(a.get("gamma", {}), params.d)
    try:
        if variant == "product":
            for key in ("delta_lower", "delta_upper"):
                _require(key in a, f"product ambiguity missing '{key}'")
            spec = ProductSet(
                delta_lower=np.asarray(a["delta_lower"], dtype=float),
                delta_upper=np.asarray(a["delta_upper"], dtype=float),
                gamma=gamma,
            )
        else:
            for key in ("b_hat", "delta"):
                _require(key in a, f"ellipsoidal ambiguity missing '{key}'")
            spec = EllipsoidalSet(
                b_hat=np.asarray(a["b_hat"], dtype=float),
                delta=float(a["delta"]),
                gamma=gamma,
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ambiguity parameters: {exc}") from exc
    _require(spec.d == params.d, "ambiguity dimension inconsistent with market")
    return spec


def parse_sim_config(raw: dict, overrides) -> SimConfig:
    s = dict(raw.get("simulate", {}))
    for key, value in overrides.items():
        if value is not None:
            s[key] = value
    try:
        return SimConfig(
            n_paths=int(s.get("n_paths", 20000)),
            n_steps=int(s.get("n_steps", 256)),
            seed=int(s.get("seed", 0)),
            antithetic=bool(s.get("antithetic", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulate parameters: {exc}") from exc


def parse_schedule(raw: dict, params: MarketParams):
    if "schedule" not in raw:
        return None
    s = raw["schedule"]
    try:
        values = tuple(
            ThetaPoint(b=np.asarray(v["b"], dtype=float), rho=np.asarray(v["rho"], dtype=float))
            for v in s["values"]
        )
        return ThetaProcessSchedule(
            breakpoints=np.asarray(s["breakpoints"], dtype=float), values=values
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def solution_to_dict(solution) -> dict:
    return {
        "theta_star": {
            "b": solution.theta_star.b.tolist(),
            "rho": solution.theta_star.rho.tolist(),
        },
        "r_star": solution.r_star,
        "case_label": solution.case_label,
        "no_trade": solution.no_trade,
        "diagnostics": _jsonable(solution.diagnostics),
    }


def _emit(report: dict, raw_config: dict) -> None:
    text = json.dumps(report, indent=2)
    out = raw_config.get("output", {})
    path = out.get("path")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _oracle_tolerance(d: int) -> float:
    if d <= 2:
        return 1e-3
    if d == 3:
        return 5e-3
    return 1e-2


def cmd_solve(args) -> int:
    raw = load_config(args.config)
    params = parse_market(raw)
    spec = parse_ambiguity(raw, params)
    solution = solve(spec, params)
    report = {
        "solution": solution_to_dict(solution),
        "strategy": strategy_report(solution, params),
    }
    exit_code = EXIT_OK
    if args.oracle_check:
        resolution = args.resolution or (2001 if n_pairs(params.d) <= 1 else 51)
        oracle = grid_oracle(spec, params, resolution)
        gap = abs(solution.r_star - oracle.r_star)
        tolerance = _oracle_tolerance(params.d)
        report["oracle_check"] = {
            "resolution": resolution,
            "r_star_oracle": oracle.r_star,
            "gap": gap,
            "tolerance": tolerance,
            "ok": gap <= tolerance,
        }
        if gap > tolerance:
            exit_code = EXIT_VERIFICATION
    _emit(report, raw)
    return exit_code


def cmd_classify(args) -> int:
    raw = load_config(args.config)
    params = parse_market(raw)
    spec = parse_ambiguity(raw, params)
    solution = solve(spec, params)
    report = strategy_report(solution, params)
    _emit(report, raw)
    print(report["narrative"], file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    raw = load_config(args.config)
    params = parse_market(raw)
    spec = parse_ambiguity(raw, params)
    solution = solve(spec, params)
    cfg = parse_sim_config(
        raw, {"n_paths": args.paths, "n_steps": args.steps, "seed": args.seed}
    )
    schedule = parse_schedule(raw, params)
    if schedule is None:
        schedule = ThetaProcessSchedule.constant(solution.theta_star)
    strategy = robust_strategy(solution, params)
    t_grid, paths = simulate_wealth(strategy, schedule, params, cfg)
    estimate = estimate_objective(paths, params)
    v0 = value_v0(solution, params)
    gap = abs(estimate.J - v0)
    allowance = 3.0 * estimate.std_error_J
    report = {
        "solution": solution_to_dict(solution),
        "V0": v0,
        "objective": {
            "mean_XT": estimate.mean_XT,
            "var_XT": estimate.var_XT,
            "J": estimate.J,
            "std_error_J": estimate.std_error_J,
            "n_paths": estimate.n_paths,
        },
        "gap_to_V0": gap,
        "allowance": allowance,
    }
    exit_code = EXIT_OK
    if gap > allowance:
        report["failure"] = "objective estimate is more than 3 standard errors from V0"
        exit_code = EXIT_VERIFICATION
    if args.probes != 0:
        strategies = default_probe_strategies(strategy)[: args.probes]
        schedules = default_probe_schedules(spec, params, solution)[: args.probes]
        try:
            principle = verify_weak_principle(
                solution, spec, params, cfg,
                probe_strategies=strategies, probe_schedules=schedules,
            )
            report["weak_principle"] = {
                "ok": principle.ok,
                "monotone": [c.__dict__ for c in principle.monotone_under_worst_case],
                "terminal": [c.__dict__ for c in principle.terminal_gain],
            }
        except PrincipleViolated as exc:
            report["weak_principle"] = {"ok": False, "probe": exc.probe, "margin": exc.margin}
            exit_code = EXIT_VERIFICATION
    out = raw.get("output", {})
    if out.get("format") == "csv" and out.get("path"):
        with open(out["path"], "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["t", "mean", "var", "se"])
            writer.writeheader()
            writer.writerows(summarize_paths(t_grid, paths))
        print(json.dumps(report, indent=2))
    else:
        _emit(report, raw)
    return exit_code


def cmd_oracle(args) -> int:
    raw = load_config(args.config)
    params = parse_market(raw)
    spec = parse_ambiguity(raw, params)
    resolution = args.resolution or (2001 if n_pairs(params.d) <= 1 else 51)
    oracle = grid_oracle(spec, params, resolution)
    _emit({"oracle": solution_to_dict(oracle)}, raw)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    raw = load_config(args.config)
    params = parse_market(raw)
    rng = np.random.default_rng(args.seed)
    d = params.d
    m = n_pairs(d)
    worst = 0.0
    checked = 0
    skipped = 0
    step = 1e-6
    while checked < args.samples and skipped < 100 * max(args.samples, 1):
        rho = rng.uniform(-0.7, 0.7, size=m)
        b = rng.uniform(-1.0, 1.0, size=d)
        theta = ThetaPoint(b=b, rho=rho)
        try:
            grad_b, grad_rho = risk_premium_gradients(theta, params)
        except RobustMVError:
            skipped += 1
            continue
        fd = np.zeros(d + m)
        for k in range(d):
            bp, bm = b.copy(), b.copy()
            bp[k] += step
            bm[k] -= step
            fd[k] = (
                risk_premium(ThetaPoint(b=bp, rho=rho), params)
                - risk_premium(ThetaPoint(b=bm, rho=rho), params)
            ) / (2 * step)
        for k in range(m):
            rp, rm = rho.copy(), rho.copy()
            rp[k] += step
            rm[k] -= step
            fd[d + k] = (
                risk_premium(ThetaPoint(b=b, rho=rp), params)
                - risk_premium(ThetaPoint(b=b, rho=rm), params)
            ) / (2 * step)
        analytic = np.concatenate([grad_b, grad_rho])
        err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-12)
        worst = max(worst, err)
        checked += 1
    report = {"samples": checked, "skipped": skipped, "worst_relative_error": worst, "threshold": 1e-5}
    print(json.dumps(report, indent=2))
    return EXIT_OK if worst < 1e-5 else EXIT_VERIFICATION


def _set_dotted(config: dict, dotted: str, value):
    node = config
    keys = dotted.split(".")
    for key in keys[:-1]:
        _require(isinstance(node, dict) and key in node, f"unknown sweep key {dotted!r}")
        node = node[key]
    _require(isinstance(node, dict) and keys[-1] in node, f"unknown sweep key {dotted!r}")
    node[keys[-1]] = value


def cmd_sweep(raw: dict) -> int:
    rows = []
    keys = sorted({k for entry in raw["sweep"] for k in entry})
    for entry in raw["sweep"]:
        variant = copy.deepcopy(raw)
        for dotted, value in entry.items():
            _set_dotted(variant, dotted, value)
        params = parse_market(variant)
        spec = parse_ambiguity(variant, params)
        solution = solve(spec, params)
        summary = strategy_report(solution, params)
        row = {k: entry.get(k, "") for k in keys}
        row.update(
            r_star=solution.r_star,
            case_label=solution.case_label,
            no_trade=solution.no_trade,
            V0=summary["V0"],
            diversification=summary["class"],
        )
        rows.append(row)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    text = buffer.getvalue()
    path = raw.get("output", {}).get("path")
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustmv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"robustmv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="worst-case scenario and robust strategy")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--oracle-check", action="store_true")
    p_solve.add_argument("--resolution", type=int, default=None)
    p_solve.set_defaults(handler=cmd_solve)

    p_classify = sub.add_parser("classify", help="diversification verdict")
    p_classify.add_argument("--config", required=True)
    p_classify.set_defaults(handler=cmd_classify)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo objective and principle checks")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--paths", type=int, default=None)
    p_sim.add_argument("--steps", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--probes", type=int, default=8,
                       help="probes per family for the principle check; 0 skips it")
    p_sim.set_defaults(handler=cmd_simulate)

    p_oracle = sub.add_parser("oracle", help="brute-force grid minimization")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--resolution", type=int, default=None)
    p_oracle.set_defaults(handler=cmd_oracle)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--config", required=True)
    p_grad.add_argument("--samples", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = load_config(args.config)
        if "sweep" in raw and args.command in ("solve", "classify"):
            return cmd_sweep(raw)
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ZeroDrift, NoMinimum) as exc:
        print(f"flagged condition: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except (SaddleViolated, PrincipleViolated) as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except RobustMVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
