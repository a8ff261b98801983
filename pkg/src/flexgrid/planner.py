"""Welfare-optimal scheduling relaxation: assembly, solve, duals, prices.

The planner minimizes thermal cost plus reported disutility minus service
utility over start probabilities x (M x T), status variables y, z (M x T)
and thermal output q (T), subject to per-slot power balance and the
start-side / end-side flexibility rows that tie y and z to x. Solving the
relaxation yields the dual certificate (lambda for balance, nu_start and
nu_end for flexibility) from which all prices are derived: an activation
price per start slot, a per-slot energy price, and early-start / late-end
flexibility credits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .model import Instance, LoadType, ValidationError, validate_instance
from . import qp

__all__ = [
    "RelaxedSolution",
    "DualCertificate",
    "PriceSet",
    "PlannerIndexMap",
    "assemble_planner_qp",
    "solve_relaxation",
    "complete_yz",
    "running_profile",
    "aggregate_demand",
    "activation_energy_price",
    "activation_flexibility_price",
    "derive_prices",
    "check_kkt",
    "instance_objective",
    "lagrangian_value",
]


@dataclass(frozen=True)
class RelaxedSolution:
    """Primal point of the scheduling relaxation.

    x[i, t-1] is the probability that load i starts at slot t. y and z are
    the completed status variables: 1 - y[i, t-1] is the probability the
    load has started by slot t, 1 - z[i, t-1] that it is still due to run
    at or after slot t. q is thermal output in kW.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    q: np.ndarray
    objective: float
    residuals: dict | None = None


@dataclass(frozen=True)
class DualCertificate:
    """Multipliers of the relaxation: lam prices energy per slot, nu_start
    and nu_end price the start-side and end-side flexibility rows."""

    lam: np.ndarray  # (T,)
    nu_start: np.ndarray  # (M, T)
    nu_end: np.ndarray  # (M, T)


@dataclass(frozen=True)
class PriceSet:
    """Equilibrium prices: p_con[i, t-1] is the activation price for load i
    starting at slot t; p_gen the per-slot energy price; p_start and p_end
    the flexibility credit rates paid against 1 - y and 1 - z."""

    p_con: np.ndarray  # (M, T)
    p_gen: np.ndarray  # (T,)
    p_start: np.ndarray  # (M, T)
    p_end: np.ndarray  # (M, T)


@dataclass(frozen=True)
class PlannerIndexMap:
    """Maps (kind, load, slot) to flat variable/row indices of the QP.

    Variable order is [q | x by load | y by load | z by load]; row order is
    [balance by slot | start-side rows by (load, slot) | end-side rows].
    ``constant`` is the objective constant dropped during assembly (the
    total disutility mass), to be added back when reporting.
    """

    M: int
    T: int
    constant: float

    def q_var(self, t):
        return t - 1

    def x_var(self, i, t):
        return self.T + i * self.T + (t - 1)

    def y_var(self, i, t):
        return self.T * (1 + self.M) + i * self.T + (t - 1)

    def z_var(self, i, t):
        return self.T * (1 + 2 * self.M) + i * self.T + (t - 1)

    def balance_row(self, t):
        return t - 1

    def start_row(self, i, t):
        return self.T + i * self.T + (t - 1)

    def end_row(self, i, t):
        return self.T * (1 + self.M) + i * self.T + (t - 1)

    @property
    def n_vars(self):
        return self.T * (1 + 3 * self.M)

    @property
    def n_rows(self):
        return self.T * (1 + 2 * self.M)

    def describe(self, j):
        """Inverse lookup: flat variable index -> (kind, load index, slot)."""
        T = self.T
        if j < T:
            return ("q", None, j + 1)
        j -= T
        kind = ("x", "y", "z")[j // (self.M * T)]
        j = j % (self.M * T)
        return (kind, j // T, j % T + 1)


def start_coefficients(tau, T):
    """(T, T) matrix C with C[t-1, r-1] = weight of x_r in the start-side
    row at slot t: min(tau, t - r + 1) for r <= t, else 0."""
    t = np.arange(1, T + 1)[:, None]
    r = np.arange(1, T + 1)[None, :]
    return np.where(r <= t, np.minimum(tau, t - r + 1), 0).astype(float)


def end_coefficients(tau, T):
    """(T, T) matrix C with C[t-1, r-1] = weight of x_r in the end-side row
    at slot t: min(tau - (t - r), tau, T - r + 1) for r >= t - tau + 1."""
    t = np.arange(1, T + 1)[:, None]
    r = np.arange(1, T + 1)[None, :]
    coef = np.minimum(np.minimum(tau - (t - r), tau), T - r + 1)
    return np.where(r >= t - tau + 1, coef, 0).astype(float)


def running_profile(tau, x_row):
    """Fraction of a load in service at each slot given start weights x_row."""
    x_row = np.asarray(x_row, dtype=float)
    T = x_row.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(x_row)])
    t = np.arange(1, T + 1)
    lo = np.maximum(0, t - tau)
    return csum[t] - csum[lo]


def aggregate_demand(inst: Instance, x):
    """Total scheduled power per slot in kW."""
    x = np.asarray(x, dtype=float)
    demand = np.zeros(inst.grid.T)
    for i, load in enumerate(inst.loads):
        demand += load.level * running_profile(load.tau, x[i])
    return demand


def complete_yz(inst: Instance, x):
    """Derive the status variables implied by x through the flexibility
    rows taken with equality.

    y[i, t-1] = 1 - S_it / tau_i where S_it counts (fractionally) the
    service slots of load i up to t; z uses the count from t onward.
    Raises when the implied values leave [0, 1] by more than 1e-9; values
    within that band are clipped.
    """
    x = np.asarray(x, dtype=float)
    M, T = x.shape
    if M != inst.n_loads or T != inst.grid.T:
        raise ValidationError(f"x has shape {x.shape}, expected ({inst.n_loads}, {inst.grid.T})")
    y = np.empty_like(x)
    z = np.empty_like(x)
    for i, load in enumerate(inst.loads):
        running = running_profile(load.tau, x[i])
        y[i] = 1.0 - np.cumsum(running) / load.tau
        z[i] = 1.0 - np.cumsum(running[::-1])[::-1] / load.tau
    low, high = min(y.min(initial=0.0), z.min(initial=0.0)), max(y.max(initial=1.0), z.max(initial=1.0))
    if low < -1e-9 or high > 1 + 1e-9:
        raise ValidationError(
            f"x does not extend to feasible status variables (range [{low}, {high}])"
        )
    return np.clip(y, 0.0, 1.0), np.clip(z, 0.0, 1.0)


def assemble_planner_qp(inst: Instance, allowed_starts=None):
    """Build the relaxation as a QP plus the index map.

    allowed_starts, when given, is an (M, T) boolean mask; start slots with
    a False entry have their x variable pinned to zero by exclusion from
    the utility objective and from all rows (used by the exact solver to
    encode branching decisions). Default allows every slot.
    """
    M, T = inst.n_loads, inst.grid.T
    imap = PlannerIndexMap(M=M, T=T, constant=float(
        sum(load.dis_start.sum() + load.dis_end.sum() for load in inst.loads)
    ))
    n = imap.n_vars
    m = imap.n_rows

    quad = np.zeros(n)
    quad[:T] = 2.0 * inst.generator.a
    lin = np.zeros(n)
    lin[:T] = inst.generator.b

    rows, cols, vals = [], [], []
    u = np.zeros(m)
    u[:T] = inst.generator.renewable

    for t in range(1, T + 1):
        r = imap.balance_row(t)
        rows.append(r)
        cols.append(imap.q_var(t))
        vals.append(-1.0)

    for i, load in enumerate(inst.loads):
        tau = load.tau
        allow = np.ones(T, dtype=bool) if allowed_starts is None else np.asarray(allowed_starts[i], dtype=bool)
        n_early = T - tau + 1
        lin[[imap.x_var(i, t) for t in range(1, n_early + 1) if allow[t - 1]]] = -load.ubar
        for t in range(1, T + 1):
            lin[imap.y_var(i, t)] = -load.dis_start[t - 1]
            lin[imap.z_var(i, t)] = -load.dis_end[t - 1]

        # Power balance: level * (running-sum of x) - q <= renewable.
        for s in range(1, T + 1):
            if not allow[s - 1]:
                continue
            j = imap.x_var(i, s)
            for t in range(s, min(T, s + tau - 1) + 1):
                rows.append(imap.balance_row(t))
                cols.append(j)
                vals.append(load.level)

        cs = start_coefficients(tau, T)
        ce = end_coefficients(tau, T)
        for t in range(1, T + 1):
            r_s = imap.start_row(i, t)
            r_e = imap.end_row(i, t)
            u[r_s] = tau
            u[r_e] = tau
            rows.append(r_s)
            cols.append(imap.y_var(i, t))
            vals.append(float(tau))
            rows.append(r_e)
            cols.append(imap.z_var(i, t))
            vals.append(float(tau))
            for s in range(1, T + 1):
                if not allow[s - 1]:
                    continue
                if cs[t - 1, s - 1] != 0.0:
                    rows.append(r_s)
                    cols.append(imap.x_var(i, s))
                    vals.append(cs[t - 1, s - 1])
                if ce[t - 1, s - 1] != 0.0:
                    rows.append(r_e)
                    cols.append(imap.x_var(i, s))
                    vals.append(ce[t - 1, s - 1])

    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    problem = qp.QpProblem(
        quad_diag=quad, linear=lin, A=A, u=u, nonneg_mask=np.ones(n, dtype=bool)
    )
    return problem, imap


def block_newton_factory(T, bal_blocks, start_blocks, end_blocks, taus=None):
    """Structure-exploiting saddle-system solver for scheduling QPs.

    Covers systems with variables [q | x per load ( | y per load | z per
    load when taus is given)] and rows [balance | start rows per load |
    end rows per load]. Each status variable appears in exactly one
    flexibility row, each flexibility row touches one load's x block, and
    loads couple only through the balance rows; pivoting status variables,
    flexibility multipliers and x blocks out in that order leaves a dense
    T x T system on the balance duals. Algebraically identical to the
    generic sparse factorization of the same Newton system.
    """
    M = len(bal_blocks)
    with_status = taus is not None
    x_off = T
    y_off = T * (1 + M)
    z_off = T * (1 + 2 * M)
    rf_off = T
    re_off = T * (1 + M)

    def build(diag1, d_s):
        d_q = diag1[:T]
        factors = []
        u_blocks = []
        schur = np.diag(d_s[:T] + 1.0 / d_q)
        info = []
        for i in range(M):
            sl_x = slice(x_off + i * T, x_off + (i + 1) * T)
            rf = slice(rf_off + i * T, rf_off + (i + 1) * T)
            re = slice(re_off + i * T, re_off + (i + 1) * T)
            if with_status:
                sl_y = slice(y_off + i * T, y_off + (i + 1) * T)
                sl_z = slice(z_off + i * T, z_off + (i + 1) * T)
                d_y = diag1[sl_y]
                d_z = diag1[sl_z]
                df = d_s[rf] + taus[i] ** 2 / d_y
                de = d_s[re] + taus[i] ** 2 / d_z
            else:
                sl_y = sl_z = d_y = d_z = None
                df = d_s[rf]
                de = d_s[re]
            C, E, W = start_blocks[i], end_blocks[i], bal_blocks[i]
            B = np.diag(diag1[sl_x]) + C.T @ (C / df[:, None]) + E.T @ (E / de[:, None])
            cf = cho_factor(B, lower=True, check_finite=False)
            U = cho_solve(cf, W.T, check_finite=False)
            schur += W @ U
            factors.append(cf)
            u_blocks.append(U)
            info.append((sl_x, sl_y, sl_z, rf, re, d_y, d_z, df, de))
        schur_cf = cho_factor(schur, lower=True, check_finite=False)

        def solve(rhs1, rhs2):
            r_q = rhs1[:T]
            rhs_lam = -(rhs2[:T] + r_q / d_q)
            hat_x = []
            tilde = []
            for i in range(M):
                sl_x, sl_y, sl_z, rf, re, d_y, d_z, df, de = info[i]
                C, E, W = start_blocks[i], end_blocks[i], bal_blocks[i]
                if with_status:
                    rt_f = rhs2[rf] - taus[i] * rhs1[sl_y] / d_y
                    rt_e = rhs2[re] - taus[i] * rhs1[sl_z] / d_z
                else:
                    rt_f = rhs2[rf]
                    rt_e = rhs2[re]
                rx = rhs1[sl_x] + C.T @ (rt_f / df) + E.T @ (rt_e / de)
                hat_x.append(rx)
                tilde.append((rt_f, rt_e))
                rhs_lam += W @ cho_solve(factors[i], rx, check_finite=False)
            d_lam = cho_solve(schur_cf, rhs_lam, check_finite=False)

            dv = np.empty_like(rhs1)
            dy = np.empty_like(rhs2)
            dv[:T] = (r_q + d_lam) / d_q
            dy[:T] = d_lam
            for i in range(M):
                sl_x, sl_y, sl_z, rf, re, d_y, d_z, df, de = info[i]
                C, E, W = start_blocks[i], end_blocks[i], bal_blocks[i]
                rt_f, rt_e = tilde[i]
                dx = cho_solve(factors[i], hat_x[i], check_finite=False) - u_blocks[i] @ d_lam
                d_mu = (C @ dx - rt_f) / df
                d_eta = (E @ dx - rt_e) / de
                dv[sl_x] = dx
                if with_status:
                    dv[sl_y] = (rhs1[sl_y] - taus[i] * d_mu) / d_y
                    dv[sl_z] = (rhs1[sl_z] - taus[i] * d_eta) / d_z
                dy[rf] = d_mu
                dy[re] = d_eta
            return dv, dy

        return solve

    return build


def scheduling_blocks(inst: Instance, allowed_starts=None):
    """Dense per-load coefficient blocks of the scheduling rows:
    balance window (level-weighted), start-side and end-side counts,
    with excluded start columns zeroed."""
    T = inst.grid.T
    t_idx = np.arange(1, T + 1)[:, None]
    s_idx = np.arange(1, T + 1)[None, :]
    bal_blocks, start_blocks, end_blocks = [], [], []
    for i, load in enumerate(inst.loads):
        allow = (
            np.ones(T, dtype=bool)
            if allowed_starts is None
            else np.asarray(allowed_starts[i], dtype=bool)
        )
        W = np.where((s_idx <= t_idx) & (t_idx <= s_idx + load.tau - 1), load.level, 0.0)
        W[:, ~allow] = 0.0
        C = start_coefficients(load.tau, T)
        C[:, ~allow] = 0.0
        E = end_coefficients(load.tau, T)
        E[:, ~allow] = 0.0
        bal_blocks.append(W)
        start_blocks.append(C)
        end_blocks.append(E)
    return bal_blocks, start_blocks, end_blocks


def newton_factory(inst: Instance, allowed_starts=None):
    """Structured saddle solver for the QP built by assemble_planner_qp."""
    W, C, E = scheduling_blocks(inst, allowed_starts)
    taus = np.array([load.tau for load in inst.loads], dtype=float)
    return block_newton_factory(inst.grid.T, W, C, E, taus=taus)


def instance_objective(inst: Instance, x, y, z, q):
    """Planner objective: cost plus disutility minus activation utility."""
    total = float(np.sum(inst.generator.cost(np.asarray(q, dtype=float))))
    for i, load in enumerate(inst.loads):
        total += float(load.dis_start @ (1.0 - y[i]))
        total += float(load.dis_end @ (1.0 - z[i]))
        n_early = inst.grid.T - load.tau + 1
        total -= load.ubar * float(np.sum(x[i][:n_early]))
    return total


def _extract(inst, imap, sol):
    M, T = imap.M, imap.T
    v = sol.primal
    q_val = v[:T].copy()
    x = np.clip(v[T : T * (1 + M)].reshape(M, T), 0.0, None)
    # Starts that cannot finish inside the horizon earn nothing and cost
    # nothing on the optimal face, so the interior point may leave mass
    # there; zeroing it selects the canonical optimum (weakly improving:
    # status variables only rise, penalties only fall, balance only
    # slackens where the energy price is zero).
    for i, load in enumerate(inst.loads):
        x[i, T - load.tau + 1 :] = 0.0
    lam = sol.ineq_duals[:T].copy()
    nu_start = sol.ineq_duals[T : T * (1 + M)].reshape(M, T).copy()
    nu_end = sol.ineq_duals[T * (1 + M) :].reshape(M, T).copy()
    y, z = complete_yz(inst, x)
    demand = aggregate_demand(inst, x)
    residuals = {
        "balance": float(np.max(demand - inst.generator.renewable - q_val, initial=0.0)),
        "start_rows": 0.0,
        "end_rows": 0.0,
        "activation_mass": 0.0,
        "solver": sol.kkt_residual,
    }
    for i, load in enumerate(inst.loads):
        n_early = T - load.tau + 1
        residuals["activation_mass"] = max(
            residuals["activation_mass"], float(np.sum(x[i][:n_early]) - 1.0)
        )
    residuals["activation_mass"] = max(residuals["activation_mass"], 0.0)
    objective = instance_objective(inst, x, y, z, q_val)
    rel = RelaxedSolution(x=x, y=y, z=z, q=q_val, objective=objective, residuals=residuals)
    duals = DualCertificate(lam=lam, nu_start=nu_start, nu_end=nu_end)
    return rel, duals


def solve_relaxation(inst: Instance, tol: float = 1e-8, max_iter: int = 200):
    """Solve the relaxation and return (solution, dual certificate).

    The returned y, z are the equality completions of x, which are always
    among the optimal choices; the pair passes check_kkt at the solver
    tolerance. Raises on invalid instances and propagates solver failure.
    """
    problems = validate_instance(inst)
    if problems:
        raise ValidationError("invalid instance: " + "; ".join(problems))
    problem, imap = assemble_planner_qp(inst)
    sol = qp.solve_qp(problem, tol=tol, max_iter=max_iter, newton_factory=newton_factory(inst))
    if sol.status != qp.OPTIMAL:
        raise RuntimeError(f"relaxation solve failed: {sol.status} ({sol.message})")
    return _extract(inst, imap, sol)


def activation_energy_price(load: LoadType, lam):
    """Energy component of the activation price.

    out[t-1] = level * sum of lam over the service window starting at t,
    truncated at the horizon.
    """
    lam = np.asarray(lam, dtype=float)
    T = lam.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(lam)])
    t = np.arange(1, T + 1)
    hi = np.minimum(T, t + load.tau - 1)
    return load.level * (csum[hi] - csum[t - 1])


def activation_flexibility_price(load: LoadType, nu_start_row, nu_end_row):
    """Flexibility component of the activation price.

    out[t-1] = sum_{s>=t} nu_start[s] * min(s - t + 1, tau)
             + sum_{s<=min(T, t+tau-1)} nu_end[s] * min(T - t + 1, tau, tau - (s - t)).
    Linear in both multiplier rows.
    """
    nu_start_row = np.asarray(nu_start_row, dtype=float)
    nu_end_row = np.asarray(nu_end_row, dtype=float)
    T = nu_start_row.shape[0]
    if nu_end_row.shape[0] != T:
        raise ValidationError("nu_start_row and nu_end_row must have equal length")
    tau = load.tau
    t = np.arange(1, T + 1)[:, None]
    s = np.arange(1, T + 1)[None, :]
    coef_s = np.where(s >= t, np.minimum(s - t + 1, tau), 0)
    coef_e = np.where(
        s <= np.minimum(T, t + tau - 1),
        np.minimum(np.minimum(T - t + 1, tau), tau - (s - t)),
        0,
    )
    return coef_s @ nu_start_row + coef_e @ nu_end_row


def derive_prices(inst: Instance, duals: DualCertificate) -> PriceSet:
    """Prices supporting the relaxation optimum as a competitive equilibrium:
    p_con = energy price + flexibility price per (load, start slot),
    p_gen = lam, p_start = tau * nu_start, p_end = tau * nu_end."""
    M, T = inst.n_loads, inst.grid.T
    if duals.lam.shape != (T,) or duals.nu_start.shape != (M, T) or duals.nu_end.shape != (M, T):
        raise ValidationError("dual certificate dimensions do not match instance")
    p_con = np.zeros((M, T))
    p_start = np.zeros((M, T))
    p_end = np.zeros((M, T))
    for i, load in enumerate(inst.loads):
        p_con[i] = activation_energy_price(load, duals.lam) + activation_flexibility_price(
            load, duals.nu_start[i], duals.nu_end[i]
        )
        p_start[i] = load.tau * duals.nu_start[i]
        p_end[i] = load.tau * duals.nu_end[i]
    return PriceSet(p_con=p_con, p_gen=duals.lam.copy(), p_start=p_start, p_end=p_end)


def check_kkt(inst: Instance, sol: RelaxedSolution, duals: DualCertificate, tol: float = 1e-6):
    """Evaluate every optimality condition family for a primal/dual pair.

    Returns a dict mapping family name to its max-norm violation. A pair
    is optimal iff every entry is ~0; the tol argument is only echoed into
    the report under key ``_tol`` for downstream pass/fail decisions.
    """
    M, T = inst.n_loads, inst.grid.T
    x, y, z, q = sol.x, sol.y, sol.z, sol.q
    if x.shape != (M, T) or duals.nu_start.shape != (M, T) or duals.lam.shape != (T,):
        raise ValidationError("solution/dual dimensions do not match instance")
    gen = inst.generator
    lam = duals.lam

    fam = {
        "gen_stationarity": float(np.max(lam - gen.marginal_cost(q), initial=0.0)),
        "gen_complementarity": float(np.max(np.abs(q * (gen.marginal_cost(q) - lam)), initial=0.0)),
        "x_stationarity": 0.0,
        "x_complementarity": 0.0,
        "x_stationarity_late": 0.0,
        "x_complementarity_late": 0.0,
        "start_dual_feasibility": 0.0,
        "start_complementarity": 0.0,
        "end_dual_feasibility": 0.0,
        "end_complementarity": 0.0,
        "balance_complementarity": 0.0,
        "dual_nonneg": float(np.max(-lam, initial=0.0)),
        "primal_feasibility": 0.0,
        "_tol": tol,
    }

    demand = aggregate_demand(inst, x)
    slack = demand - gen.renewable - q
    fam["balance_complementarity"] = float(np.max(np.abs(lam * slack), initial=0.0))
    fam["primal_feasibility"] = max(
        float(np.max(slack, initial=0.0)),
        float(np.max(-q, initial=0.0)),
        0.0,
    )

    for i, load in enumerate(inst.loads):
        tau = load.tau
        n_early = T - tau + 1
        reduced = activation_energy_price(load, lam) + activation_flexibility_price(
            load, duals.nu_start[i], duals.nu_end[i]
        )
        early = reduced[:n_early] - load.ubar
        late = reduced[n_early:]
        fam["x_stationarity"] = max(fam["x_stationarity"], float(np.max(-early, initial=0.0)))
        fam["x_complementarity"] = max(
            fam["x_complementarity"], float(np.max(np.abs(x[i][:n_early] * early), initial=0.0))
        )
        fam["x_stationarity_late"] = max(
            fam["x_stationarity_late"], float(np.max(-late, initial=0.0))
        )
        fam["x_complementarity_late"] = max(
            fam["x_complementarity_late"], float(np.max(np.abs(x[i][n_early:] * late), initial=0.0))
        )

        gap_s = tau * duals.nu_start[i] - load.dis_start
        gap_e = tau * duals.nu_end[i] - load.dis_end
        fam["start_dual_feasibility"] = max(
            fam["start_dual_feasibility"], float(np.max(-gap_s, initial=0.0))
        )
        fam["start_complementarity"] = max(
            fam["start_complementarity"], float(np.max(np.abs(y[i] * gap_s), initial=0.0))
        )
        fam["end_dual_feasibility"] = max(
            fam["end_dual_feasibility"], float(np.max(-gap_e, initial=0.0))
        )
        fam["end_complementarity"] = max(
            fam["end_complementarity"], float(np.max(np.abs(z[i] * gap_e), initial=0.0))
        )

        fam["dual_nonneg"] = max(
            fam["dual_nonneg"],
            float(np.max(-duals.nu_start[i], initial=0.0)),
            float(np.max(-duals.nu_end[i], initial=0.0)),
        )

        s_counts = start_coefficients(tau, T) @ x[i]
        e_counts = end_coefficients(tau, T) @ x[i]
        fam["primal_feasibility"] = max(
            fam["primal_feasibility"],
            float(np.max(s_counts + tau * y[i] - tau, initial=0.0)),
            float(np.max(e_counts + tau * z[i] - tau, initial=0.0)),
            float(np.max(-x[i], initial=0.0)),
            float(np.max(-y[i], initial=0.0)),
            float(np.max(-z[i], initial=0.0)),
        )

    return fam


def lagrangian_value(inst: Instance, sol: RelaxedSolution, duals: DualCertificate) -> float:
    """Dual-price decomposition of the Lagrangian at an arbitrary point.

    Algebraically identical to dualizing the balance and flexibility rows
    directly, for any (y, z, q, lam, nu) and any x supported on completable
    starts (t <= T - tau + 1; optima place no mass elsewhere). This
    identity is the basis for reading activation prices off the duals.
    """
    gen = inst.generator
    total = float(np.sum(gen.cost(sol.q)) - duals.lam @ (sol.q + gen.renewable))
    for i, load in enumerate(inst.loads):
        reduced = activation_energy_price(load, duals.lam) + activation_flexibility_price(
            load, duals.nu_start[i], duals.nu_end[i]
        )
        n_early = inst.grid.T - load.tau + 1
        total += float(reduced @ sol.x[i]) - load.ubar * float(np.sum(sol.x[i][:n_early]))
        total += float((1.0 - sol.y[i]) @ (load.dis_start - load.tau * duals.nu_start[i]))
        total += float((1.0 - sol.z[i]) @ (load.dis_end - load.tau * duals.nu_end[i]))
    return total
