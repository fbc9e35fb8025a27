"""Command line entry point: ``shortfall-opt {solve,frontier,simulate,verify,ae-check}``.

Exit codes: 0 ok, 1 usage or schema error, 2 infeasible risk budget,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bsmarket, discrete
from .config import ConfigError, ProblemConfig, load_config
from .errors import Infeasible, ShortfallOptError
from .numerics import lognormal_rule
from .preferences import SHIPPED_LOSSES, SHIPPED_UTILITIES, classify_ae_w, preferences_to_json
from .risk import FeasibilityInterval, classify_budget, feasible_interval

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="problem JSON file")
    parser.add_argument("--out", default=default, help="write output here instead of stdout")
    parser.add_argument("--seed", type=int, default=default, help="random seed (overrides config)")
    parser.add_argument("--quad-order", type=int, default=default, help="quadrature order (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shortfall-opt", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the constrained problem")
    _global_flags(p, True)
    p = sub.add_parser("frontier", help="sweep the risk budget")
    _global_flags(p, True)
    p.add_argument("--x1-grid", required=True, help="lo:hi:n; lo and hi may be numbers, r_min, r_max or mid")
    p = sub.add_parser("simulate", help="simulate price, density and optimal-wealth paths")
    _global_flags(p, True)
    p.add_argument("--n-paths", type=int, default=100)
    p.add_argument("--n-steps", type=int, default=250)
    p = sub.add_parser("verify", help="run verification checks")
    _global_flags(p, True)
    p.add_argument("--suite", choices=("bs", "discrete", "all"), default="all")
    p = sub.add_parser("ae-check", help="asymptotic elasticity classification")
    _global_flags(p, True)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _emit(text: str, out: str | None):
    if not text.endswith("\n"):
        text += "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Problem:
    """A loaded config with overrides applied and the risk interval cached."""

    def __init__(self, cfg: ProblemConfig, args):
        self.cfg = cfg
        self.market, self.u, self.l = cfg.build()
        self.kind = cfg.kind
        self.order = args.quad_order if getattr(args, "quad_order", None) is not None else cfg.quadrature_order
        if not 1 <= self.order <= 256:
            raise UsageError("--quad-order must be in [1, 256]")
        self.seed = args.seed if getattr(args, "seed", None) is not None else cfg.seed
        self.x = cfg.x
        self._interval = None

    def interval(self) -> tuple[float, float]:
        if self._interval is None:
            if self.kind == "bs":
                f = feasible_interval(self.market, self.u, self.l, self.x, 0.0, self.order)
                self._interval = (f.r_min, f.r_max)
            else:
                self._interval = discrete.risk_interval(self.market, self.u, self.l, self.x)
        return self._interval

    def resolve(self, x1) -> float:
        if isinstance(x1, str):
            r_min, r_max = self.interval()
            table = {"r_min": r_min, "r_max": r_max, "mid": 0.5 * (r_min + r_max)}
            if x1 not in table:
                try:
                    return float(x1)
                except ValueError:
                    raise UsageError(f"unknown risk budget {x1!r}") from None
            return table[x1]
        return float(x1)

    def solve(self, x1: float):
        if self.kind == "bs":
            return bsmarket.solve_dual(self.market, self.u, self.l, self.x, x1, self.cfg.truncation_pair,
                                       lam=self.cfg.lambda_fixed, order=self.order)
        r_min, r_max = self.interval()
        feas = FeasibilityInterval(r_min, r_max, x1, classify_budget(r_min, r_max, x1))
        return discrete.solve_constrained(self.market, self.u, self.l, self.x, x1, feasibility=feas)

    def solution_dict(self, sol) -> dict:
        if self.kind == "bs":
            return sol.to_dict()
        d = sol.to_dict()
        d.update(preferences_to_json(self.u, self.l))
        d.update({"x": self.x, "x1": sol.feasibility.x1, "binding": sol.lambda_star > 0})
        return d


def _summary(problem: Problem, sol) -> dict[str, float]:
    if problem.kind == "bs":
        return {"y": sol.y, "lambda_star": sol.lambda_star, "u": sol.value, "r_min": sol.feasibility.r_min,
                "r_max": sol.feasibility.r_max, "x1": sol.x1}
    return {"y": sol.y, "lambda_star": sol.lambda_star, "u": sol.u_value, "r_min": sol.feasibility.r_min,
            "r_max": sol.feasibility.r_max, "x1": sol.feasibility.x1}


# ---------------------------------------------------------------------------
# commands


def cmd_solve(problem: Problem, args) -> int:
    x1 = problem.resolve(problem.cfg.x1)
    sol = problem.solve(x1)
    _emit(_dumps(problem.solution_dict(sol)), args.out)
    return EXIT_OK


def _parse_grid(problem: Problem, spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError("--x1-grid must look like lo:hi:n")
    lo, hi = problem.resolve(parts[0]), problem.resolve(parts[1])
    try:
        n = int(parts[2])
    except ValueError:
        raise UsageError("grid size must be an integer") from None
    if n < 1 or hi < lo:
        raise UsageError("need n >= 1 and lo <= hi")
    return np.array([lo]) if n == 1 else np.linspace(lo, hi, n)


def cmd_frontier(problem: Problem, args) -> int:
    grid = _parse_grid(problem, args.x1_grid)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["x1", "u", "lambda_star", "y", "status"])
    for x1 in grid:
        x1 = float(x1)
        try:
            sol = problem.solve(x1)
        except (ShortfallOptError, ValueError):
            wr.writerow([repr(x1), "", "", "", "failed"])
            continue
        s = _summary(problem, sol)
        wr.writerow([repr(x1), repr(s["u"]), repr(s["lambda_star"]), repr(s["y"]), sol.feasibility.status])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_simulate(problem: Problem, args) -> int:
    if problem.kind != "bs":
        raise UsageError("simulate needs a Black-Scholes market")
    if args.n_paths < 1 or args.n_steps < 1:
        raise UsageError("--n-paths and --n-steps must be >= 1")
    sol = problem.solve(problem.resolve(problem.cfg.x1))
    paths = bsmarket.simulate(problem.market, sol, problem.seed, args.n_paths, args.n_steps)
    _emit(paths.to_csv(), args.out)
    return EXIT_OK


def _check(name, error, tol, passed=None) -> dict:
    ok = bool(error <= tol) if passed is None else bool(passed)
    return {"name": name, "passed": ok, "error": error, "tolerance": tol}


def _golden_checks(problem: Problem, sol) -> list[dict]:
    expected = problem.cfg.expected or {}
    got = _summary(problem, sol)
    tol = problem.cfg.expected_rel_tol
    out = []
    for key in sorted(expected):
        if key not in got:
            raise UsageError(f"unknown key in expected: {key!r}")
        err = abs(got[key] - expected[key]) / max(1.0, abs(expected[key]))
        out.append(_check(f"golden_{key}", err, tol))
    return out


def bs_checks(problem: Problem, sol) -> list[dict]:
    model, x = problem.market, problem.x
    checks = [_check("budget_residual", abs(sol.residuals[0]), 1e-9 * x)]
    if sol.feasibility.status == "binding" and problem.cfg.lambda_fixed is None:
        checks.append(_check("risk_residual", abs(sol.residuals[1]), 1e-9 * max(1.0, abs(sol.x1))))
    elif problem.cfg.lambda_fixed is None:
        checks.append(_check("risk_slack", max(sol.residuals[1], 0.0), 1e-9 * max(1.0, abs(sol.x1))))

    pair = bsmarket.is_example_pair(sol.u, sol.l)
    m0 = model.cumulative_variance(0.0)
    worst = 0.0
    for t in model.grid:
        n_t, w = lognormal_rule(m0 - model.cumulative_variance(float(t)), problem.order)
        if pair:
            f = bsmarket.example_wealth_F(model, sol, n_t, float(t))
        else:
            f = bsmarket.wealth_process(model, sol, n_t, float(t), problem.order)
        worst = max(worst, abs(float(np.dot(w, n_t * f)) - x) / x)
    checks.append(_check("martingale_budget", worst, 1e-8))

    if pair:
        zs = np.array([0.7, 1.0, 1.4])
        t_mid = 0.5 * model.T
        f_cf = bsmarket.example_wealth_F(model, sol, zs, t_mid)
        f_q = bsmarket.wealth_process(model, sol, zs, t_mid, problem.order)
        checks.append(_check("closed_form_vs_quadrature", float(np.max(np.abs(f_cf - f_q) / np.abs(f_q))), 1e-8))
        h = 1e-5
        fd = (bsmarket.example_wealth_F(model, sol, zs + h, t_mid)
              - bsmarket.example_wealth_F(model, sol, zs - h, t_mid)) / (2 * h)
        an = bsmarket.example_wealth_Fz(model, sol, zs, t_mid)
        checks.append(_check("strategy_derivative", float(np.max(np.abs(an - fd) / np.abs(fd))), 1e-6))
        rms = []
        for n_steps in (250, 1000):
            paths = bsmarket.simulate(model, None, problem.seed, 200, n_steps)
            err = bsmarket.hedge_replication_error(model, sol, paths)
            rms.append(float(np.sqrt(np.mean(err**2))))
        checks.append(_check("replication_rms", rms[-1], 0.02 * x, passed=rms[1] < rms[0] and rms[1] <= 0.02 * x))
    return checks


def discrete_checks(problem: Problem, sol_x1: float) -> tuple[list[dict], object]:
    report = discrete.verify_bidual(problem.market, problem.u, problem.l, problem.x, sol_x1)
    checks = [c.to_dict() for c in report.checks]
    if report.solution.feasibility.status == "binding":
        _, u_bf = discrete.brute_force_constrained(problem.market, problem.u, problem.l, sol_x1, problem.x)
        checks.append(_check("brute_force_primal", abs(u_bf - report.solution.u_value), 1e-5))
    return checks, report.solution


def cmd_verify(problem: Problem, args) -> int:
    if args.suite not in ("all", problem.kind):
        raise UsageError(f"--suite {args.suite} does not apply to a {problem.kind} config")
    x1 = problem.resolve(problem.cfg.x1)
    if problem.kind == "bs":
        sol = problem.solve(x1)
        checks = bs_checks(problem, sol)
    else:
        checks, sol = discrete_checks(problem, x1)
    checks += _golden_checks(problem, sol)
    passed = all(c["passed"] for c in checks)
    _emit(_dumps({"suite": problem.kind, "passed": passed, "checks": checks}), args.out)
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_ae_check(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        market, u, l = cfg.build()
        pairs = [(u, l)]
    else:
        pairs = [(u, l) for u in SHIPPED_UTILITIES for l in SHIPPED_LOSSES]
    rows = []
    for u, l in pairs:
        d = preferences_to_json(u, l)
        d["report"] = classify_ae_w(u, l).to_dict()
        rows.append(d)
    _emit(_dumps(rows if len(rows) > 1 else rows[0]), args.out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "frontier": cmd_frontier, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: solve, frontier, simulate, verify or ae-check")
        if args.command == "ae-check":
            return cmd_ae_check(args)
        if not args.config:
            raise UsageError("--config is required")
        cfg = load_config(args.config)
        try:
            problem = Problem(cfg, args)
        except (ValueError, ShortfallOptError) as exc:
            raise ConfigError(f"invalid market or preferences: {exc}") from exc
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return COMMANDS[args.command](problem, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible:
        print("infeasible: x1 < r_min", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ShortfallOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY if args.command == "verify" else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
