"""Per-entity best responses and the competitive-equilibrium certificate.

An allocation plus a price set is a competitive equilibrium when every
price-taking entity, solving only its own problem at those prices, finds
the allocated decision optimal: each consumer chooses its activation
probabilities against the activation price and flexibility credits, the
generator picks thermal output against the energy price, and the system
operator picks a balanced schedule minimizing priced imbalance.

Verification compares objective values, not solutions: the per-entity
programs are degenerate linear programs with many optima, and the
allocation only needs to attain the optimal value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import GeneratorModel, Instance, LoadType, TimeGrid, ValidationError
from .planner import (
    PriceSet,
    RelaxedSolution,
    activation_energy_price,
    activation_flexibility_price,
    aggregate_demand,
    block_newton_factory,
    complete_yz,
    end_coefficients,
    scheduling_blocks,
    start_coefficients,
)
from . import qp

__all__ = [
    "Allocation",
    "EquilibriumReport",
    "consumer_best_response",
    "consumer_objective",
    "generator_best_response",
    "generator_profit",
    "iso_best_response",
    "iso_objective",
    "verify_equilibrium",
]


@dataclass(frozen=True)
class Allocation:
    """Candidate equilibrium allocation (same shapes as RelaxedSolution)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    q: np.ndarray

    @classmethod
    def from_solution(cls, sol: RelaxedSolution) -> "Allocation":
        return cls(x=sol.x, y=sol.y, z=sol.z, q=sol.q)


@dataclass(frozen=True)
class EquilibriumReport:
    """Best-response gaps per entity; all must vanish at an equilibrium.

    Gaps are achieved-minus-optimal (consumers, ISO) or optimal-minus-
    achieved (generator), so every gap is nonnegative up to solver noise.
    """

    consumer_gaps: np.ndarray
    generator_gap: float
    iso_gap: float
    is_equilibrium: bool
    tol: float

    def max_gap(self) -> float:
        return max(
            float(np.max(self.consumer_gaps, initial=0.0)),
            self.generator_gap,
            self.iso_gap,
        )


def _scheduling_polytope(load: LoadType, T: int):
    """Rows S_t(x) <= tau and E_t(x) <= tau bounding one load's x block."""
    cs = start_coefficients(load.tau, T)
    ce = end_coefficients(load.tau, T)
    A = sp.csr_matrix(np.vstack([cs, ce]))
    u = np.full(2 * T, float(load.tau))
    return A, u


def consumer_objective(load: LoadType, p_con_row, p_start_row, p_end_row, x_row, y_row, z_row):
    """Net cost a consumer assigns to (x, y, z) at the given prices:
    activation payments minus utility plus uncompensated disutility."""
    T = len(p_con_row)
    n_early = T - load.tau + 1
    value = float(np.asarray(p_con_row) @ x_row) - load.ubar * float(np.sum(x_row[:n_early]))
    value += float((load.dis_start - np.asarray(p_start_row)) @ (1.0 - y_row))
    value += float((load.dis_end - np.asarray(p_end_row)) @ (1.0 - z_row))
    return value


def consumer_best_response(load: LoadType, p_con_row, p_start_row, p_end_row, tol: float = 1e-9):
    """Optimal expected net cost of one consumer and a minimizer.

    The status variables are determined by x through the flexibility rows
    taken with equality, so the program reduces to a linear program over x
    alone inside the scheduling polytope; y and z are recovered afterwards.
    Returns (optimal value, x_row, y_row, z_row).
    """
    p_con_row = np.asarray(p_con_row, dtype=float)
    T = p_con_row.shape[0]
    cost = p_con_row + activation_flexibility_price(
        load,
        (load.dis_start - np.asarray(p_start_row, dtype=float)) / load.tau,
        (load.dis_end - np.asarray(p_end_row, dtype=float)) / load.tau,
    )
    n_early = T - load.tau + 1
    cost[:n_early] -= load.ubar

    A, u = _scheduling_polytope(load, T)
    problem = qp.QpProblem(
        quad_diag=np.zeros(T), linear=cost, A=A, u=u, nonneg_mask=np.ones(T, dtype=bool)
    )
    sol = qp.solve_qp(problem, tol=tol)
    if sol.status != qp.OPTIMAL:
        raise RuntimeError(f"consumer best response failed: {sol.status} ({sol.message})")
    x_row = np.clip(sol.primal, 0.0, None)
    shell = Instance(TimeGrid(T=T), (load,), GeneratorModel(1.0, 0.0, np.zeros(T)))
    y_row, z_row = complete_yz(shell, x_row[None, :])
    return float(cost @ sol.primal), x_row, y_row[0], z_row[0]


def generator_profit(gen: GeneratorModel, p_gen, q):
    p_gen = np.asarray(p_gen, dtype=float)
    q = np.asarray(q, dtype=float)
    return float(p_gen @ (q + gen.renewable) - np.sum(gen.cost(q)))


def generator_best_response(gen: GeneratorModel, p_gen):
    """Profit-maximizing thermal schedule; closed form via marginal cost.

    q_t = max(0, (p_t - b) / (2a)); profit includes renewable revenue.
    """
    q = gen.best_output(p_gen)
    return generator_profit(gen, p_gen, q), q


def iso_objective(inst: Instance, p_gen, q, x):
    """Priced imbalance sum_t p_t * (q_t + g_t - demand_t)."""
    p_gen = np.asarray(p_gen, dtype=float)
    surplus = np.asarray(q, dtype=float) + inst.generator.renewable - aggregate_demand(inst, x)
    return float(p_gen @ surplus)


def iso_best_response(inst: Instance, p_gen, tol: float = 1e-9):
    """Minimize priced oversupply over balanced (q, x) schedules.

    x ranges over each load's scheduling polytope, q over nonnegative
    output covering residual demand. Bounded whenever p_gen >= 0 (asserted
    by construction of the polytope). Returns (value, q, x).
    """
    p_gen = np.asarray(p_gen, dtype=float)
    if np.any(p_gen < 0):
        raise ValidationError("p_gen must be nonnegative")
    M, T = inst.n_loads, inst.grid.T
    n = T + M * T
    lin = np.zeros(n)
    lin[:T] = p_gen

    # Rows ordered [balance | start rows per load | end rows per load] so
    # the structured saddle solver applies.
    bal_blocks, start_blocks, end_blocks = scheduling_blocks(inst)
    rows, cols, vals = [], [], []
    u = np.zeros(T + 2 * M * T)
    u[:T] = inst.generator.renewable
    for t in range(T):
        rows.append(t)
        cols.append(t)
        vals.append(-1.0)
    for i, load in enumerate(inst.loads):
        lin[T + i * T : T + (i + 1) * T] = -activation_energy_price(load, p_gen)
        for name, block, row_off in (
            ("bal", bal_blocks[i], 0),
            ("start", start_blocks[i], T + i * T),
            ("end", end_blocks[i], T * (1 + M) + i * T),
        ):
            nz = np.nonzero(block)
            rows.extend((row_off + nz[0]).tolist())
            cols.extend((T + i * T + nz[1]).tolist())
            vals.extend(block[nz].tolist())
        u[T + i * T : T + (i + 1) * T] = load.tau
        u[T * (1 + M) + i * T : T * (1 + M) + (i + 1) * T] = load.tau

    A = sp.csr_matrix((vals, (rows, cols)), shape=(T + 2 * M * T, n))
    problem = qp.QpProblem(
        quad_diag=np.zeros(n),
        linear=lin,
        A=A,
        u=u,
        nonneg_mask=np.ones(n, dtype=bool),
    )
    factory = block_newton_factory(T, bal_blocks, start_blocks, end_blocks)
    sol = qp.solve_qp(problem, tol=tol, newton_factory=factory)
    if sol.status != qp.OPTIMAL:
        raise RuntimeError(f"ISO best response failed: {sol.status} ({sol.message})")
    q = np.clip(sol.primal[:T], 0.0, None)
    x = np.clip(sol.primal[T:].reshape(M, T), 0.0, None)
    value = sol.objective + float(p_gen @ inst.generator.renewable)
    return value, q, x


def verify_equilibrium(inst: Instance, alloc: Allocation, prices: PriceSet, tol: float = 1e-5):
    """Certify the competitive-equilibrium property of (alloc, prices).

    For each entity the achieved objective under the allocation is compared
    with that entity's best-response optimum at the given prices; the pair
    is an equilibrium iff every gap is within tol (scaled by problem size).
    """
    M, T = inst.n_loads, inst.grid.T
    if alloc.x.shape != (M, T) or prices.p_con.shape != (M, T) or prices.p_gen.shape != (T,):
        raise ValidationError("allocation/price dimensions do not match instance")

    consumer_gaps = np.zeros(M)
    ok = True
    for i, load in enumerate(inst.loads):
        best, _, _, _ = consumer_best_response(
            load, prices.p_con[i], prices.p_start[i], prices.p_end[i]
        )
        achieved = consumer_objective(
            load, prices.p_con[i], prices.p_start[i], prices.p_end[i],
            alloc.x[i], alloc.y[i], alloc.z[i],
        )
        consumer_gaps[i] = achieved - best
        ok = ok and consumer_gaps[i] <= tol * (1.0 + abs(best))

    best_profit, _ = generator_best_response(inst.generator, prices.p_gen)
    achieved_profit = generator_profit(inst.generator, prices.p_gen, alloc.q)
    generator_gap = best_profit - achieved_profit
    ok = ok and generator_gap <= tol * (1.0 + abs(best_profit))

    iso_best, _, _ = iso_best_response(inst, prices.p_gen)
    iso_achieved = iso_objective(inst, prices.p_gen, alloc.q, alloc.x)
    iso_gap = iso_achieved - iso_best
    ok = ok and iso_gap <= tol * (1.0 + abs(iso_best))

    return EquilibriumReport(
        consumer_gaps=consumer_gaps,
        generator_gap=float(generator_gap),
        iso_gap=float(iso_gap),
        is_equilibrium=bool(ok),
        tol=tol,
    )
