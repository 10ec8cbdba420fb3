"""Command-line interface: instance I/O, experiments, sweeps, report emission.

Exit codes: 0 success, 2 a guarantee or invariant check failed, 3 infeasible
or invalid input.  Every subcommand is deterministic given its flags; --seed
falls back to the FBCRS_SEED environment variable, then to 0.

CSV headers (RFC 4180, UTF-8, '.' decimal separator):
  simulate-single-unit: element,c_f,c_b,empirical_rate,ci_low,ci_high
  simulate-knapsack (exact): element,c_f,c_b,rate_f,rate_b,rate_error
  simulate-knapsack (mc): element,c_f,c_b,rate_f,ci_low_f,ci_high_f,rate_b,ci_low_b,ci_high_b
  ration: agent,beta,q,x,c_f,c_b,tau_f,tau_b,expected_service,bound,slack
  sweep: n,rho,primal,dual,gap,bound
Element and agent columns are 1-based.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from .errors import InfeasibleError, InvalidInstanceError, InvariantViolationError, SolverError
from .instances import KnapsackInstance, RationingInstance, SingleUnitInstance, SizeLaw, load_instance
from .knapsack import (
    DEFAULT_POOL_SIZE,
    closed_form_knapsack_plan,
    monitor_trace,
    run_knapsack_exact,
    run_knapsack_mc,
)
from .lp_si import LP_TOL, alpha_0, dual_certificate_uniform, dual_feasibility, solve_lp_si
from .rationing import exante_check, max_uniform_beta, run_rationing
from .single_unit import closed_form_plan, mc_selection_rates

MONITOR_GRID = tuple(round(0.05 * k, 10) for k in range(1, 11))


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    return int(os.environ.get("FBCRS_SEED", "0"))


def _require_trials(mode: str, trials: int | None) -> int:
    if mode == "mc":
        if trials is None or trials < 1:
            raise InvalidInstanceError("--trials is required (and positive) in mc mode")
        return trials
    if trials is not None:
        raise InvalidInstanceError("--trials only applies to mc mode")
    return 0


def _load(path: str, kind):
    inst = load_instance(path)
    if not isinstance(inst, kind):
        raise InvalidInstanceError(
            f"{path} holds a {type(inst).__name__}, expected {kind.__name__}"
        )
    return inst


def _emit_json(out: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_csv(out: str | None, header: list[str], rows: list[list]) -> None:
    def _cell(v):
        return "" if v is None else v

    cleaned = [[_cell(v) for v in row] for row in rows]
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(cleaned)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(cleaned)


def cmd_constants(args) -> int:
    """The headline guarantees, each computed from its closed form."""
    values = {
        "adversarial": 0.5,
        "two-order-threshold": (math.sqrt(5.0) - 1.0) / 2.0,
        "fb-crs": alpha_0(1.0),
        "random-order": 1.0 - math.exp(-1.0),
        "knapsack-adversarial": 1.0 / (3.0 + math.exp(-2.0)),
        "knapsack-fb": 1.0 / 3.0,
        "knapsack-fb-upper": alpha_0(2.0),
        "knapsack-random-upper": (1.0 - math.exp(-2.0)) / 2.0,
    }
    _emit_json(args.out, {k: round(v, 12) for k, v in values.items()})
    return 0


def cmd_lp_solve(args) -> int:
    inst = _load(args.instance, SingleUnitInstance)
    plan = solve_lp_si(inst)
    payload = {
        "lpopt": plan.objective,
        "c_f": list(plan.c_f),
        "c_b": list(plan.c_b),
    }
    code = 0
    if args.dual:
        if len(set(inst.x)) != 1 or inst.n % 2 == 0:
            raise InvalidInstanceError("--dual needs a uniform instance with an odd element count")
        cert = dual_certificate_uniform(inst.n, inst.rho)
        report = dual_feasibility(cert, inst.rho)
        payload["dual_objective"] = cert.objective
        payload["max_violation"] = report.max_violation
        if not report.ok() or cert.objective < plan.objective - LP_TOL:
            code = 2
    _emit_json(args.out, payload)
    return code


def cmd_simulate_single_unit(args) -> int:
    inst = _load(args.instance, SingleUnitInstance)
    trials = _require_trials("mc", args.trials)
    seed = _resolve_seed(args.seed)
    plan = closed_form_plan(inst) if args.plan == "closed" else solve_lp_si(inst)
    estimates = mc_selection_rates(inst, plan, trials, seed, workers=args.workers)
    rows = []
    for i in range(inst.n):
        est = estimates[("overall", i)]
        rows.append([i + 1, plan.c_f[i], plan.c_b[i], est.point, est.ci_low, est.ci_high])
    _emit_csv(args.out, ["element", "c_f", "c_b", "empirical_rate", "ci_low", "ci_high"], rows)
    return 0


def cmd_simulate_knapsack(args) -> int:
    inst = _load(args.instance, KnapsackInstance)
    trials = _require_trials(args.mode, args.trials)
    seed = _resolve_seed(args.seed)
    plan = closed_form_knapsack_plan(inst)
    code = 0
    if args.mode == "exact":
        result = run_knapsack_exact(inst, plan)
        rows = []
        for i in range(inst.n):
            err = max(
                abs(rate - planned[i])
                for by_size, planned in (
                    (result.rates_by_size_f[i], plan.c_f),
                    (result.rates_by_size_b[i], plan.c_b),
                )
                for rate in by_size.values()
            )
            rows.append([i + 1, plan.c_f[i], plan.c_b[i], result.rates_f[i], result.rates_b[i], err])
        header = ["element", "c_f", "c_b", "rate_f", "rate_b", "rate_error"]
    else:
        estimates = run_knapsack_mc(
            inst, plan, trials, seed, workers=args.workers, pool_size=args.pool_size
        )
        rows = []
        for i in range(inst.n):
            ef, eb = estimates[("f", i)], estimates[("b", i)]
            rows.append(
                [i + 1, plan.c_f[i], plan.c_b[i],
                 ef.point, ef.ci_low, ef.ci_high, eb.point, eb.ci_low, eb.ci_high]
            )
        header = ["element", "c_f", "c_b",
                  "rate_f", "ci_low_f", "ci_high_f", "rate_b", "ci_low_b", "ci_high_b"]
    if args.monitor:
        exact = result if args.mode == "exact" else run_knapsack_exact(inst, plan)
        report = monitor_trace(inst, plan, exact, MONITOR_GRID)
        summary = {
            "total_violations": report.total_violations,
            "max_expectation_error": report.max_expectation_error,
            "ok": report.ok(),
        }
        print(json.dumps(summary), file=sys.stderr)
        if not report.ok():
            code = 2
    _emit_csv(args.out, header, rows)
    return code


def cmd_ration(args) -> int:
    inst = _load(args.instance, RationingInstance)
    trials = _require_trials(args.mode, args.trials)
    seed = _resolve_seed(args.seed)
    if args.beta == "auto":
        betas = (max_uniform_beta(inst),) * inst.n
    else:
        with open(args.beta, encoding="utf-8") as fh:
            betas = tuple(float(b) for b in json.load(fh))
    target = exante_check(inst, betas)
    if target is None:
        raise InfeasibleError("requested service levels need more than the unit supply")
    plan = None
    if args.plan == "closed" and not inst.has_type_i:
        plan = closed_form_plan(target.single_unit())
    result = run_rationing(
        inst,
        target,
        plan=plan,
        mode=args.mode,
        trials=trials,
        seed=seed,
        workers=args.workers,
        pool_size=args.pool_size,
    )
    rows = []
    code = 0
    for a in result.agents:
        rows.append(
            [a.index + 1, a.beta, a.q, a.x, a.c_f, a.c_b, a.tau_f, a.tau_b,
             a.expected_service, a.bound, a.slack]
        )
        if args.mode == "mc" and a.service_low is not None:
            half = (a.service_high - a.service_low) / 2
            if a.slack < -3 * half:
                code = 2
    _emit_csv(
        args.out,
        ["agent", "beta", "q", "x", "c_f", "c_b", "tau_f", "tau_b",
         "expected_service", "bound", "slack"],
        rows,
    )
    return code


def cmd_dual_certificate(args) -> int:
    cert = dual_certificate_uniform(args.n, args.rho)
    report = dual_feasibility(cert, args.rho)
    bound = alpha_0(args.rho) + (args.rho + 2.0) / args.n
    ok = report.ok() and cert.objective <= bound + LP_TOL
    _emit_json(
        args.out,
        {
            "n": args.n,
            "rho": args.rho,
            "objective": cert.objective,
            "bound": bound,
            "max_violation": report.max_violation,
            "xi_sum_slack": report.xi_sum_slack,
            "min_entry": report.min_entry,
            "ok": ok,
        },
    )
    return 0 if ok else 2


def cmd_sweep(args) -> int:
    ns = [int(v) for v in args.n.split(",") if v]
    rhos = [float(v) for v in args.rho.split(",") if v]
    if not ns or not rhos:
        raise InvalidInstanceError("sweep needs nonempty --n and --rho grids")
    rows = []
    code = 0
    for n in ns:
        for rho in rhos:
            if args.kind == "knapsack-min":
                if not 0.0 < rho <= 1.0:
                    raise InvalidInstanceError("knapsack-min needs total mass rho in (0, 1]")
                inst = KnapsackInstance((SizeLaw(((rho / n, 1.0),)),) * n)
                plan = closed_form_knapsack_plan(inst)
                result = run_knapsack_exact(inst, plan)
                primal = plan.objective
                dual = (4.0 - rho) / 9.0
                gap = max(abs(primal - dual), result.max_rate_error(plan))
                bound = 1e-10
            else:
                inst = SingleUnitInstance((rho / n,) * n)
                primal = solve_lp_si(inst).objective
                bound = (rho + 2.0) / n
                if args.kind == "lpopt":
                    dual = alpha_0(rho)
                    gap = primal - dual
                    if gap < -LP_TOL:
                        code = 2
                else:  # dual-gap
                    cert = dual_certificate_uniform(n, rho)
                    if not dual_feasibility(cert, rho).ok():
                        code = 2
                    dual = cert.objective
                    gap = dual - primal
                    if gap < -LP_TOL:
                        code = 2
            if gap > bound + LP_TOL:
                code = 2
            rows.append([n, rho, primal, dual, gap, bound])
    _emit_csv(args.out, ["n", "rho", "primal", "dual", "gap", "bound"], rows)
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbcrs",
        description="Forward-backward contention resolution: LP, executors, rationing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=True, workers=True):
        if trials:
            p.add_argument("--trials", type=int, default=None, help="Monte Carlo trial count")
        p.add_argument("--seed", type=int, default=None, help="root seed (default: $FBCRS_SEED or 0)")
        if workers:
            p.add_argument("--workers", type=int, default=1, help="worker threads for trials")
        p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("constants", help="headline guarantees from their closed forms")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_constants)

    p = sub.add_parser("lp-solve", help="instance-optimal selection plan")
    p.add_argument("--instance", required=True)
    p.add_argument("--dual", action="store_true",
                   help="also build the dual certificate (uniform odd instances only)")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_lp_solve)

    p = sub.add_parser("simulate-single-unit", help="Monte Carlo selection rates")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", choices=("lp", "closed"), default="closed")
    common(p)
    p.set_defaults(handler=cmd_simulate_single_unit)

    p = sub.add_parser("simulate-knapsack", help="knapsack executor rates, exact or sampled")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", choices=("closed",), default="closed")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--monitor", action="store_true",
                   help="check induction invariants; JSON report to stderr, exit 2 on violations")
    p.add_argument("--pool-size", type=int, default=DEFAULT_POOL_SIZE)
    common(p)
    p.set_defaults(handler=cmd_simulate_knapsack)

    p = sub.add_parser("ration", help="solve service targets and execute the allocation")
    p.add_argument("--instance", required=True)
    p.add_argument("--beta", default="auto",
                   help='"auto" for the max uniform level, or a JSON file of per-agent levels')
    p.add_argument("--plan", choices=("lp", "closed"), default="lp",
                   help="single-unit route plan source (the knapsack route uses the closed form)")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--pool-size", type=int, default=DEFAULT_POOL_SIZE)
    common(p)
    p.set_defaults(handler=cmd_ration)

    p = sub.add_parser("dual-certificate", help="uniform-instance dual certificate and bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_dual_certificate)

    p = sub.add_parser("sweep", help="grid report over (n, rho)")
    p.add_argument("--kind", choices=("lpopt", "dual-gap", "knapsack-min"), required=True)
    p.add_argument("--n", required=True, help="comma-separated element counts")
    p.add_argument("--rho", required=True, help="comma-separated total masses")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (InvalidInstanceError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InvariantViolationError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
