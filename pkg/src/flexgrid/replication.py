"""Replicated populations, Monte-Carlo rounding, and the market mechanism.

Each load type is interpreted as N identical replicas with demand,
utility and disutility scaled by 1/N. An optimal point of the relaxation
scales directly: primal values copy to every replica, the energy price is
unchanged, and the flexibility multipliers divide by N. Sampling replica
start slots from the relaxed probabilities then realizes a binary
schedule whose balance violation vanishes as N grows (root-N rate).

run_mechanism executes the full market protocol: solve, announce prices,
collect per-type best responses, sample assignments, and fill the payment
ledger. The audits check budget balance and ex-post individual
rationality on the resulting transcript.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Instance, ValidationError
from .planner import (
    DualCertificate,
    PriceSet,
    RelaxedSolution,
    activation_energy_price,
    activation_flexibility_price,
    aggregate_demand,
    check_kkt,
    complete_yz,
    derive_prices,
    instance_objective,
    running_profile,
    solve_relaxation,
)
from .equilibrium import consumer_best_response, consumer_objective

__all__ = [
    "ReplicatedSolution",
    "MechanismTranscript",
    "scale_solution",
    "check_replicated_kkt",
    "sample_starts",
    "lln_study",
    "lln_slope",
    "expected_welfare",
    "run_mechanism",
    "audit_budget_balance",
    "audit_individual_rationality",
]


@dataclass(frozen=True)
class ReplicatedSolution:
    """Equal-per-replica (compressed) optimum of the N-fold population.

    x, y, z, q hold the common per-replica values (each replica of type i
    gets row i); nu_start and nu_end are the per-replica multipliers, i.e.
    the originals divided by n_replicas. lam is unchanged.
    """

    n_replicas: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    nu_start: np.ndarray
    nu_end: np.ndarray


@dataclass(frozen=True)
class MechanismTranscript:
    """Everything the market protocol produced for one seeded run.

    sampled_starts[i, n] is the start slot of replica n of type i, with 0
    meaning never scheduled. Cash amounts are in type-level units (each
    replica's payment times n_replicas), which keeps the ledger and the
    audits independent of the replication factor.
    """

    n_replicas: int
    seed: int
    prices: PriceSet
    sampled_starts: np.ndarray  # (M, N) int, 0 = never
    realized_q: np.ndarray
    net_utilities: np.ndarray  # (M, N) type-level units
    consumption_payments: float
    flexibility_credits: float
    generator_revenue: float
    planner_objective: float
    expected_welfare: float
    realized_welfare: float


def scale_solution(
    inst: Instance,
    sol: RelaxedSolution,
    duals: DualCertificate,
    n_replicas: int,
    tol: float = 1e-8,
    input_tol: float = 1e-6,
) -> ReplicatedSolution:
    """Scale an optimum of the relaxation to the N-fold population.

    The input pair must pass the optimality check at input_tol. The scaled
    point is re-verified against the replicated optimality system at tol
    before being returned.
    """
    if n_replicas < 1:
        raise ValidationError(f"n_replicas must be >= 1, got {n_replicas}")
    fam = check_kkt(inst, sol, duals)
    worst = max(v for k, v in fam.items() if not k.startswith("_"))
    if worst > input_tol:
        raise ValidationError(f"input pair fails the optimality check: {worst:.3e} > {input_tol:.0e}")
    scaled = ReplicatedSolution(
        n_replicas=n_replicas,
        x=sol.x.copy(),
        y=sol.y.copy(),
        z=sol.z.copy(),
        q=sol.q.copy(),
        lam=duals.lam.copy(),
        nu_start=duals.nu_start / n_replicas,
        nu_end=duals.nu_end / n_replicas,
    )
    report = check_replicated_kkt(inst, scaled)
    worst = max(v for k, v in report.items() if not k.startswith("_"))
    if worst > tol:
        raise ValidationError(f"scaled solution fails the replicated check: {worst:.3e} > {tol:.0e}")
    return scaled


def check_replicated_kkt(inst: Instance, rsol: ReplicatedSolution):
    """Optimality families of the N-fold population problem, evaluated
    directly on the replicated values (per-replica demand level / N,
    per-replica utility and disutility divided by N)."""
    N = rsol.n_replicas
    T = inst.grid.T
    gen = inst.generator
    lam = rsol.lam
    fam = {
        "gen_stationarity": float(np.max(lam - gen.marginal_cost(rsol.q), initial=0.0)),
        "gen_complementarity": float(
            np.max(np.abs(rsol.q * (gen.marginal_cost(rsol.q) - lam)), initial=0.0)
        ),
        "x_stationarity": 0.0,
        "x_complementarity": 0.0,
        "start_dual_feasibility": 0.0,
        "start_complementarity": 0.0,
        "end_dual_feasibility": 0.0,
        "end_complementarity": 0.0,
        "balance_complementarity": 0.0,
        "dual_nonneg": float(np.max(-lam, initial=0.0)),
        "primal_feasibility": 0.0,
        "status_equalities": 0.0,
    }

    # Aggregate demand: N replicas of level l/N reproduce the original.
    demand = aggregate_demand(inst, rsol.x)
    slack = demand - gen.renewable - rsol.q
    fam["balance_complementarity"] = float(np.max(np.abs(lam * slack), initial=0.0))
    fam["primal_feasibility"] = max(
        float(np.max(slack, initial=0.0)), float(np.max(-rsol.q, initial=0.0)), 0.0
    )

    y_eq, z_eq = complete_yz(inst, rsol.x)
    fam["status_equalities"] = max(
        float(np.max(np.abs(rsol.y - y_eq), initial=0.0)),
        float(np.max(np.abs(rsol.z - z_eq), initial=0.0)),
    )

    for i, load in enumerate(inst.loads):
        tau = load.tau
        n_early = T - tau + 1
        # Per-replica prices: energy part scales by 1/N through the level,
        # flexibility part through the divided multipliers.
        reduced = activation_energy_price(load, lam) / N + activation_flexibility_price(
            load, rsol.nu_start[i], rsol.nu_end[i]
        )
        early = reduced[:n_early] - load.ubar / N
        fam["x_stationarity"] = max(fam["x_stationarity"], float(np.max(-early, initial=0.0)))
        fam["x_complementarity"] = max(
            fam["x_complementarity"],
            float(np.max(np.abs(rsol.x[i][:n_early] * early), initial=0.0)),
        )
        gap_s = tau * rsol.nu_start[i] - load.dis_start / N
        gap_e = tau * rsol.nu_end[i] - load.dis_end / N
        fam["start_dual_feasibility"] = max(
            fam["start_dual_feasibility"], float(np.max(-gap_s, initial=0.0))
        )
        fam["start_complementarity"] = max(
            fam["start_complementarity"], float(np.max(np.abs(rsol.y[i] * gap_s), initial=0.0))
        )
        fam["end_dual_feasibility"] = max(
            fam["end_dual_feasibility"], float(np.max(-gap_e, initial=0.0))
        )
        fam["end_complementarity"] = max(
            fam["end_complementarity"], float(np.max(np.abs(rsol.z[i] * gap_e), initial=0.0))
        )
        fam["dual_nonneg"] = max(
            fam["dual_nonneg"],
            float(np.max(-rsol.nu_start[i], initial=0.0)),
            float(np.max(-rsol.nu_end[i], initial=0.0)),
        )
        fam["primal_feasibility"] = max(
            fam["primal_feasibility"], float(np.max(-rsol.x[i], initial=0.0))
        )

    return fam


def sample_starts(inst: Instance, x_hat, n_replicas: int, seed) -> np.ndarray:
    """Sample a start slot (or never) for every replica of every type.

    Each replica of type i draws independently from the categorical
    distribution putting mass x_hat[i, t-1] on start slot t (for slots
    where service completes within the horizon) and the remaining mass on
    never starting. Returns an (M, N) int array with 0 encoding never.
    Deterministic given the seed; load i consumes the i-th row of a single
    (M, N) uniform draw, so runs with equal seeds agree elementwise.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    M, T = x_hat.shape
    if M != inst.n_loads or T != inst.grid.T:
        raise ValidationError(f"x_hat has shape {x_hat.shape}, expected ({inst.n_loads}, {inst.grid.T})")
    rng = np.random.default_rng(seed)
    uniforms = rng.random((M, n_replicas))
    starts = np.zeros((M, n_replicas), dtype=np.int64)
    for i, load in enumerate(inst.loads):
        n_early = T - load.tau + 1
        probs = np.clip(x_hat[i][:n_early], 0.0, None)
        total = float(probs.sum())
        if total > 1.0 + 1e-8:
            raise ValidationError(
                f"load {load.id!r}: start probabilities sum to {total}, exceeding 1"
            )
        cum = np.cumsum(probs)
        idx = np.searchsorted(cum, uniforms[i], side="right")
        starts[i] = np.where(idx < n_early, idx + 1, 0)
        # Guard the knife edge where u lands beyond the represented mass.
        starts[i][uniforms[i] >= min(total, 1.0)] = 0
    return starts


def _start_tables(inst: Instance):
    """Per (load, start slot): realized disutility and net welfare term.

    Entry [i, t-1] is the disutility a type-i replica incurs when started
    at slot t (computed from the realized status profile); the welfare
    term subtracts the service utility.
    """
    M, T = inst.n_loads, inst.grid.T
    disutility = np.full((M, T), np.nan)
    for i, load in enumerate(inst.loads):
        shell = Instance(inst.grid, (load,), inst.generator)
        for start in range(1, T - load.tau + 2):
            x = np.zeros((1, T))
            x[0, start - 1] = 1.0
            y, z = complete_yz(shell, x)
            disutility[i, start - 1] = float(load.dis_start @ (1.0 - y[0])) + float(
                load.dis_end @ (1.0 - z[0])
            )
    return disutility


def _realized_demand(inst: Instance, starts: np.ndarray) -> np.ndarray:
    """Aggregate demand of sampled replicas, per-replica level l_i / N."""
    M, N = starts.shape
    T = inst.grid.T
    demand = np.zeros(T)
    for i, load in enumerate(inst.loads):
        served = starts[i][starts[i] > 0]
        counts = np.bincount(served, minlength=T + 1)[1:].astype(float)
        demand += (load.level / N) * running_profile(load.tau, counts)
    return demand


def expected_welfare(inst: Instance, sol: RelaxedSolution) -> float:
    """Closed-form expectation of realized welfare under the sampling rule.

    By linearity of expectation this equals the planner objective at the
    relaxed point, independent of the replication factor.
    """
    y, z = complete_yz(inst, sol.x)
    return instance_objective(inst, sol.x, y, z, sol.q)


def lln_study(inst: Instance, sol: RelaxedSolution, Ns, seed, n_seeds: int = 20):
    """Measure how sampled schedules converge to the relaxed one.

    For each population size N, replicas are sampled n_seeds times with
    substreams spawned from the master seed (child k * n_seeds + j drives
    repetition j at size index k, so serial and parallel execution agree).
    Thermal output stays fixed at the relaxed q. Reports, per N, the mean
    over seeds of the worst per-slot balance violation and of the absolute
    welfare gap to the relaxed optimum.
    """
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(Ns) * n_seeds)
    disutility = _start_tables(inst)
    g = inst.generator.renewable
    base_cost = float(np.sum(inst.generator.cost(sol.q)))
    rows = []
    for k, N in enumerate(Ns):
        violations = np.zeros(n_seeds)
        gaps = np.zeros(n_seeds)
        for j in range(n_seeds):
            starts = sample_starts(inst, sol.x, N, children[k * n_seeds + j])
            demand = _realized_demand(inst, starts)
            violations[j] = float(np.max(demand - g - sol.q, initial=0.0))
            welfare = base_cost
            for i, load in enumerate(inst.loads):
                served = starts[i][starts[i] > 0]
                if served.size:
                    welfare += float(
                        np.sum(disutility[i, served - 1] - load.ubar)
                    ) / N
            gaps[j] = abs(welfare - sol.objective)
        rows.append(
            {
                "N": int(N),
                "mean_violation": float(np.mean(violations)),
                "mean_objective_gap": float(np.mean(gaps)),
            }
        )
    return rows


def lln_slope(rows) -> float:
    """Log-log slope of mean balance violation against population size."""
    pts = [(r["N"], r["mean_violation"]) for r in rows if r["mean_violation"] > 0]
    if len(pts) < 2:
        return float("nan")
    logs = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(logs[0], logs[1], 1)[0])


def run_mechanism(
    inst: Instance,
    n_replicas: int,
    seed: int,
    tol: float = 1e-6,
    solve_tol: float = 1e-9,
) -> MechanismTranscript:
    """Execute the market protocol for a replicated population.

    Steps: solve the relaxation, announce the derived prices, have each
    type best-respond (the response must match the announced schedule's
    value within tol), sample replica assignments from the schedule, fix
    generation at the relaxed output, and fill the payment ledger.

    Realization probabilities drop slots whose activation price exceeds
    the utility by more than a solver-noise margin; such slots carry only
    numerical dust and sampling them would violate individual rationality
    by spurious amounts. Expected-value ledgers use the unclipped x.
    """
    sol, duals = solve_relaxation(inst, tol=solve_tol)
    prices = derive_prices(inst, duals)
    M, T = inst.n_loads, inst.grid.T

    for i, load in enumerate(inst.loads):
        best, _, _, _ = consumer_best_response(
            load, prices.p_con[i], prices.p_start[i], prices.p_end[i]
        )
        achieved = consumer_objective(
            load, prices.p_con[i], prices.p_start[i], prices.p_end[i],
            sol.x[i], sol.y[i], sol.z[i],
        )
        if achieved - best > tol * (1.0 + abs(best)):
            raise RuntimeError(
                f"load {load.id!r}: announced schedule misses its best response "
                f"by {achieved - best:.3e}"
            )

    # Keep only starts whose reduced activation cost is zero up to noise.
    x_sample = np.zeros((M, T))
    margins = np.zeros((M, T))
    for i, load in enumerate(inst.loads):
        n_early = T - load.tau + 1
        margin = prices.p_con[i][:n_early] - load.ubar
        keep = margin <= 10.0 * solve_tol * (1.0 + abs(load.ubar))
        x_sample[i, :n_early] = np.where(keep, sol.x[i][:n_early], 0.0)
        margins[i, :n_early] = margin
    starts = sample_starts(inst, x_sample, n_replicas, seed)

    disutility = _start_tables(inst)
    credits = np.zeros((M, T))
    for i, load in enumerate(inst.loads):
        shell = Instance(inst.grid, (load,), inst.generator)
        for t in range(1, T - load.tau + 2):
            x = np.zeros((1, T))
            x[0, t - 1] = 1.0
            y, z = complete_yz(shell, x)
            credits[i, t - 1] = float(prices.p_start[i] @ (1.0 - y[0])) + float(
                prices.p_end[i] @ (1.0 - z[0])
            )

    net = np.zeros((M, n_replicas))
    for i, load in enumerate(inst.loads):
        served = starts[i] > 0
        slots = starts[i][served] - 1
        net[i, served] = (
            load.ubar
            - prices.p_con[i][slots]
            - disutility[i, slots]
            + credits[i, slots]
        )

    consumption = float(np.sum(prices.p_con * sol.x))
    flex_credits = float(
        np.sum(prices.p_start * (1.0 - sol.y)) + np.sum(prices.p_end * (1.0 - sol.z))
    )
    revenue = float(prices.p_gen @ (sol.q + inst.generator.renewable))

    base_cost = float(np.sum(inst.generator.cost(sol.q)))
    realized_welfare = base_cost
    for i, load in enumerate(inst.loads):
        served = starts[i][starts[i] > 0]
        if served.size:
            realized_welfare += float(np.sum(disutility[i, served - 1] - load.ubar)) / n_replicas

    return MechanismTranscript(
        n_replicas=n_replicas,
        seed=int(seed),
        prices=prices,
        sampled_starts=starts,
        realized_q=sol.q.copy(),
        net_utilities=net,
        consumption_payments=consumption,
        flexibility_credits=flex_credits,
        generator_revenue=revenue,
        planner_objective=sol.objective,
        expected_welfare=expected_welfare(inst, sol),
        realized_welfare=realized_welfare,
    )


def audit_budget_balance(transcript: MechanismTranscript, tol: float = 1e-8):
    """Absolute gap between money paid in and money paid out.

    Generator revenue plus flexibility credits must equal consumption
    payments; the identity is evaluated with the equilibrium (expected)
    quantities already folded into the ledger. Returns the imbalance;
    passes iff imbalance <= tol * (1 + total payments).
    """
    imbalance = abs(
        transcript.generator_revenue
        + transcript.flexibility_credits
        - transcript.consumption_payments
    )
    return imbalance


def audit_individual_rationality(transcript: MechanismTranscript, tol: float = 1e-8):
    """Worst realized net utility across all sampled replicas.

    Unscheduled replicas have exactly zero; scheduled replicas combine
    utility, activation payment, realized disutility and flexibility
    credits along the realized service window. Passes iff >= -tol.
    """
    net = transcript.net_utilities
    return float(net.min()) if net.size else 0.0
