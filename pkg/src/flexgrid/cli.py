"""Command-line driver.

Subcommands:
  solve      solve one instance (relaxed or exact) and write report files
  verify     check an allocation/price pair for the equilibrium property
  mechanism  run the market mechanism with sampled replicas and audits
  casestudy  EV-charging study over surge levels and flexibility modes

Exit codes: 0 success / verified, 1 verification or audit failure,
2 input error. All randomness flows from --seed; reports embed the seed
and content digests of their inputs, and repeated runs with identical
inputs are byte-identical. FLEXGRID_THREADS caps the number of parallel
case-study jobs.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import equilibrium, ingest, milp, planner, replication, serialize
from .model import GeneratorModel, Instance, TimeGrid, ValidationError, validate_instance
from .serialize import CURRENCY, KW, qty

__all__ = ["main", "run_case_study"]

BUDGET_TOL = 1e-8
IR_TOL = 1e-8

TIMESERIES_HEADER = ["slot", "aggregate_load_kw", "thermal_generation_kw", "renewable_kw"]
SUMMARY_HEADER = [
    "surge_pct",
    "mode",
    "n_loads",
    "proportion_served",
    "welfare",
    "peak_demand_kw",
    "peak_generation_kw",
]


def _load_json(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(p) as fh:
        return json.load(fh)


def _metrics(inst: Instance, sol: planner.RelaxedSolution) -> dict:
    demand = planner.aggregate_demand(inst, sol.x)
    served = _proportion_served(inst, sol.x)
    return {
        "peak_demand_kw": qty(float(np.max(demand, initial=0.0)), KW),
        "peak_generation_kw": qty(float(np.max(sol.q, initial=0.0)), KW),
        "proportion_served": None if served is None else qty(served, "fraction"),
        "welfare": qty(-sol.objective, CURRENCY),
    }


def _proportion_served(inst: Instance, x):
    if inst.n_loads == 0:
        return None
    total = 0.0
    for i, load in enumerate(inst.loads):
        n_early = inst.grid.T - load.tau + 1
        total += float(np.sum(x[i][:n_early]))
    return total / inst.n_loads


def cmd_solve(args) -> int:
    data = _load_json(args.instance)
    inst = serialize.instance_from_dict(data)
    problems = validate_instance(inst)
    if problems:
        raise ValidationError("invalid instance: " + "; ".join(problems))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sol, duals = planner.solve_relaxation(inst, tol=args.tol)
    prices = planner.derive_prices(inst, duals)
    kkt = planner.check_kkt(inst, sol, duals)
    report_eq = equilibrium.verify_equilibrium(
        inst, equilibrium.Allocation.from_solution(sol), prices
    )

    report = {
        "command": "solve",
        "mode": "exact" if args.exact else "relaxed",
        "instance_digest": serialize.digest(serialize.instance_to_dict(inst)),
        "tolerance": args.tol,
        "solver": {
            "status": "optimal",
            "residuals": sol.residuals,
            "max_kkt_violation": max(v for k, v in kkt.items() if not k.startswith("_")),
        },
        "objective_relaxed": qty(sol.objective, CURRENCY),
        "metrics": _metrics(inst, sol),
        "prices": serialize.prices_to_dict(prices),
        "equilibrium": serialize.equilibrium_report_to_dict(report_eq),
    }
    if args.exact:
        schedule, stats = milp.branch_and_bound(inst, gap_tol=max(args.tol, 1e-9))
        report["exact"] = {
            "objective": qty(schedule.objective, CURRENCY),
            "starts": [s if s is not None else 0 for s in schedule.starts],
            "nodes_explored": stats.nodes_explored,
            "best_bound": qty(stats.best_bound, CURRENCY),
            "bound_gap": qty(stats.gap, CURRENCY),
            "integrality_gap": qty(schedule.objective - sol.objective, CURRENCY),
        }

    serialize.write_json(out / "report.json", report)
    serialize.write_json(
        out / "allocation.json",
        serialize.allocation_to_dict(equilibrium.Allocation.from_solution(sol)),
    )
    serialize.write_json(out / "prices.json", serialize.prices_to_dict(prices))
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_verify(args) -> int:
    inst = serialize.instance_from_dict(_load_json(args.instance))
    alloc = serialize.allocation_from_dict(_load_json(args.allocation))
    prices = serialize.prices_from_dict(_load_json(args.prices))
    M, T = inst.n_loads, inst.grid.T
    for name, arr, shape in (
        ("allocation x", alloc.x, (M, T)),
        ("allocation q", alloc.q, (T,)),
        ("prices p_con", prices.p_con, (M, T)),
        ("prices p_gen", prices.p_gen, (T,)),
    ):
        if arr.shape != shape:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
    report = equilibrium.verify_equilibrium(inst, alloc, prices, tol=args.tol)
    payload = serialize.equilibrium_report_to_dict(report)
    payload["command"] = "verify"
    payload["instance_digest"] = serialize.digest(serialize.instance_to_dict(inst))
    sys.stdout.write(serialize.canonical_json(payload))
    return 0 if report.is_equilibrium else 1


def cmd_mechanism(args) -> int:
    inst = serialize.instance_from_dict(_load_json(args.instance))
    problems = validate_instance(inst)
    if problems:
        raise ValidationError("invalid instance: " + "; ".join(problems))
    transcript = replication.run_mechanism(inst, args.replicas, seed=args.seed)
    imbalance = replication.audit_budget_balance(transcript)
    budget_scale = 1.0 + abs(transcript.consumption_payments)
    min_net = replication.audit_individual_rationality(transcript)
    budget_pass = imbalance <= BUDGET_TOL * budget_scale
    ir_pass = min_net >= -IR_TOL

    scheduled = int(np.sum(transcript.sampled_starts > 0))
    payload = {
        "command": "mechanism",
        "instance_digest": serialize.digest(serialize.instance_to_dict(inst)),
        "seed": args.seed,
        "replicas": args.replicas,
        "ledger": {
            "consumption_payments": qty(transcript.consumption_payments, CURRENCY),
            "flexibility_credits": qty(transcript.flexibility_credits, CURRENCY),
            "generator_revenue": qty(transcript.generator_revenue, CURRENCY),
        },
        "audits": {
            "budget_imbalance": qty(imbalance, CURRENCY),
            "budget_imbalance_relative": imbalance / budget_scale,
            "budget_balanced": budget_pass,
            "min_net_utility": qty(min_net, CURRENCY),
            "individually_rational": ir_pass,
        },
        "welfare": {
            "planner_objective": qty(transcript.planner_objective, CURRENCY),
            "expected_realized": qty(transcript.expected_welfare, CURRENCY),
            "realized": qty(transcript.realized_welfare, CURRENCY),
        },
        "scheduled_replicas": scheduled,
        "scheduled_fraction": scheduled / transcript.sampled_starts.size
        if transcript.sampled_starts.size
        else None,
    }
    if args.lln:
        Ns = [int(v) for v in args.lln.split(",") if v.strip()]
        sol, _ = planner.solve_relaxation(inst, tol=1e-9)
        rows = replication.lln_study(inst, sol, Ns, seed=args.seed)
        payload["lln"] = {
            "table": [
                {
                    "N": r["N"],
                    "mean_balance_violation": qty(r["mean_violation"], KW),
                    "mean_objective_gap": qty(r["mean_objective_gap"], CURRENCY),
                }
                for r in rows
            ],
            "slope": replication.lln_slope(rows),
        }
    sys.stdout.write(serialize.canonical_json(payload))
    if not (budget_pass and ir_pass):
        failed = [name for name, ok in (("budget", budget_pass), ("ir", ir_pass)) if not ok]
        print(f"audit failure: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def run_case_study(
    sessions_path,
    generation_path,
    out_dir,
    alpha: float = 0.01,
    ubar: float = 100.0,
    cost_a: float = 0.5,
    cost_b: float = 0.0,
    surges=(0, 25, 50, 75, 100),
    seed: int = 0,
    lenient: bool = False,
    tol: float = 1e-8,
    max_workers: int | None = None,
):
    """Solve the study grid (surge level x flexibility mode) and write
    per-slot plot data plus a summary.

    The base day is the earliest calendar day in the sessions file; all
    sessions from other days form the surge pool. The same sampled surge
    identities are reused across flexibility modes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(sessions_path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError("sessions csv: empty file")
        days = sorted(
            {
                datetime.fromisoformat(row["connection_time"]).date()
                for row in reader
                if row.get("connection_time")
            }
        )
    if not days:
        raise ValidationError("sessions csv: no usable rows")
    base_day = days[0]
    pool_days = days[1:]

    grid = TimeGrid(T=96, slot_minutes=15)
    g = ingest.parse_generation(generation_path, grid, lenient=lenient)

    base_parsed = ingest.parse_sessions(sessions_path, grid, base_day, lenient=lenient)
    pool_parsed = []
    for day in pool_days:
        pool_parsed.extend(
            ingest.parse_sessions(sessions_path, grid, day, lenient=lenient).sessions
        )

    rejected = {"parse_issues": len(base_parsed.issues), "conversion": 0}
    jobs = {}
    for count_mode, mode in enumerate(ingest.FLEXIBILITY_MODES):
        cfg = ingest.ScenarioConfig(
            alpha=alpha, ubar=ubar, cost_a=cost_a, cost_b=cost_b, seed=seed, flexibility_mode=mode
        )
        base_loads = []
        for session in base_parsed.sessions:
            try:
                base_loads.append(ingest.session_to_load(session, grid, cfg))
            except ValidationError:
                rejected["conversion"] += count_mode == 0
        pool_loads = []
        for session in pool_parsed:
            try:
                pool_loads.append(ingest.session_to_load(session, grid, cfg))
            except ValidationError:
                rejected["conversion"] += count_mode == 0
        base_inst = Instance(grid, tuple(base_loads), GeneratorModel(cost_a, cost_b, g))
        for surge in surges:
            jobs[(surge, mode)] = ingest.build_surge(base_inst, pool_loads, surge, seed)

    if max_workers is None:
        max_workers = max(1, int(os.environ.get("FLEXGRID_THREADS", "1") or 1))
    max_workers = min(max_workers, max(1, len(jobs)))

    def solve_one(key):
        inst = jobs[key]
        sol, _ = planner.solve_relaxation(inst, tol=tol)
        return key, inst, sol

    results = {}
    if max_workers > 1:
        # Outer pin keeps the per-solve BLAS limits a no-op transition, so
        # worker threads cannot race the global pool size.
        with threadpool_limits(limits=1):
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                for key, inst, sol in pool.map(solve_one, sorted(jobs)):
                    results[key] = (inst, sol)
    else:
        for key in sorted(jobs):
            _, inst, sol = solve_one(key)
            results[key] = (inst, sol)

    summary_rows = []
    metrics = {}
    for (surge, mode) in sorted(results):
        inst, sol = results[(surge, mode)]
        demand = planner.aggregate_demand(inst, sol.x)
        rows = [
            (t + 1, float(demand[t]), float(sol.q[t]), float(inst.generator.renewable[t]))
            for t in range(grid.T)
        ]
        serialize.write_csv_rows(out / f"timeseries_surge{surge}_{mode}.csv", TIMESERIES_HEADER, rows)
        served = _proportion_served(inst, sol.x)
        entry = {
            "n_loads": inst.n_loads,
            "proportion_served": served,
            "welfare": -sol.objective,
            "peak_demand_kw": float(np.max(demand, initial=0.0)),
            "peak_generation_kw": float(np.max(sol.q, initial=0.0)),
        }
        metrics[(surge, mode)] = entry
        summary_rows.append(
            (
                surge,
                mode,
                entry["n_loads"],
                float(entry["proportion_served"]),
                float(entry["welfare"]),
                entry["peak_demand_kw"],
                entry["peak_generation_kw"],
            )
        )
    serialize.write_csv_rows(out / "summary.csv", SUMMARY_HEADER, summary_rows)

    comparisons = {}
    for surge in surges:
        flex = metrics[(surge, "quadratic")]
        ond = metrics[(surge, "on_demand")]
        comparisons[str(surge)] = {
            "peak_generation_reduction_pct": 100.0
            * (1.0 - flex["peak_generation_kw"] / ond["peak_generation_kw"])
            if ond["peak_generation_kw"] > 0
            else 0.0,
            "peak_demand_reduction_pct": 100.0
            * (1.0 - flex["peak_demand_kw"] / ond["peak_demand_kw"])
            if ond["peak_demand_kw"] > 0
            else 0.0,
            "welfare_gain": flex["welfare"] - ond["welfare"],
        }

    report = {
        "command": "casestudy",
        "seed": seed,
        "base_day": str(base_day),
        "pool_days": [str(d) for d in pool_days],
        "inputs": {
            "sessions_digest": serialize.digest(Path(sessions_path).read_text()),
            "generation_digest": serialize.digest(Path(generation_path).read_text()),
        },
        "parameters": {
            "alpha": alpha,
            "ubar": ubar,
            "cost_a": cost_a,
            "cost_b": cost_b,
            "surges": list(surges),
        },
        "rejected_sessions": rejected,
        "results": {
            f"{surge}_{mode}": {
                "n_loads": metrics[(surge, mode)]["n_loads"],
                "proportion_served": qty(metrics[(surge, mode)]["proportion_served"], "fraction"),
                "welfare": qty(metrics[(surge, mode)]["welfare"], CURRENCY),
                "peak_demand_kw": qty(metrics[(surge, mode)]["peak_demand_kw"], KW),
                "peak_generation_kw": qty(metrics[(surge, mode)]["peak_generation_kw"], KW),
            }
            for (surge, mode) in sorted(metrics)
        },
        "flexible_vs_on_demand": comparisons,
    }
    serialize.write_json(out / "report.json", report)
    return report


def cmd_casestudy(args) -> int:
    surges = [int(v) for v in args.surges.split(",") if v.strip()]
    run_case_study(
        args.sessions,
        args.generation,
        args.out,
        alpha=args.alpha,
        ubar=args.ubar,
        cost_a=args.cost_a,
        cost_b=args.cost_b,
        surges=surges,
        seed=args.seed,
        lenient=args.lenient,
    )
    print(f"wrote case study outputs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexgrid",
        description="Schedule and price flexible non-preemptive loads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve an instance and write reports")
    p_solve.add_argument("instance", help="instance JSON file")
    mode = p_solve.add_mutually_exclusive_group()
    mode.add_argument("--relaxed", action="store_true", help="solve the relaxation (default)")
    mode.add_argument("--exact", action="store_true", help="also solve the binary problem")
    p_solve.add_argument("--tol", type=float, default=1e-8)
    p_solve.add_argument("--out", required=True, help="output directory")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="verify a competitive equilibrium")
    p_verify.add_argument("allocation", help="allocation JSON file")
    p_verify.add_argument("prices", help="prices JSON file")
    p_verify.add_argument("instance", help="instance JSON file")
    p_verify.add_argument("--tol", type=float, default=1e-5)
    p_verify.set_defaults(func=cmd_verify)

    p_mech = sub.add_parser("mechanism", help="run the market mechanism with audits")
    p_mech.add_argument("instance", help="instance JSON file")
    p_mech.add_argument("--replicas", type=int, default=1000)
    p_mech.add_argument("--seed", type=int, default=0)
    p_mech.add_argument("--lln", default="", help="comma-separated population sizes")
    p_mech.set_defaults(func=cmd_mechanism)

    p_case = sub.add_parser("casestudy", help="EV charging study over surge levels")
    p_case.add_argument("sessions", help="sessions CSV file")
    p_case.add_argument("generation", help="generation CSV file")
    p_case.add_argument("--alpha", type=float, default=0.01)
    p_case.add_argument("--ubar", type=float, default=100.0)
    p_case.add_argument("--cost-a", dest="cost_a", type=float, default=0.5)
    p_case.add_argument("--cost-b", dest="cost_b", type=float, default=0.0)
    p_case.add_argument("--surges", default="0,25,50,75,100")
    p_case.add_argument("--seed", type=int, default=0)
    p_case.add_argument("--out", required=True, help="output directory")
    p_case.add_argument("--lenient", action="store_true", help="ignore unknown CSV columns")
    p_case.set_defaults(func=cmd_casestudy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "mechanism" and args.replicas < 1:
        print("error: --replicas must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
