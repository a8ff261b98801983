"""Exact binary scheduling: enumeration oracle and branch-and-bound.

The binary problem assigns each load either a start slot in
1..T - tau + 1 or no service at all; thermal output then follows from the
balance constraint. Late starts that would truncate service are excluded
(they never earn utility, so they are never part of an optimum).

branch_and_bound uses best-first search with the convex relaxation as the
node bound; brute_force_schedule enumerates every joint assignment and is
the oracle the solver is tested against.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .model import GeneratorModel, Instance, ValidationError, validate_instance
from . import planner, qp

__all__ = [
    "BinarySchedule",
    "BnbStats",
    "evaluate_schedule",
    "brute_force_schedule",
    "branch_and_bound",
]

ENUMERATION_BUDGET = 10**7
_CHUNK = 65536
_INTEGRALITY_TOL = 1e-7


@dataclass(frozen=True)
class BinarySchedule:
    """Starts per load (None = never served), balancing output, objective."""

    starts: tuple
    q: np.ndarray
    objective: float


@dataclass
class BnbStats:
    nodes_explored: int
    best_bound: float
    incumbent_objective: float

    @property
    def gap(self) -> float:
        return self.incumbent_objective - self.best_bound


def _starts_to_x(inst: Instance, starts):
    M, T = inst.n_loads, inst.grid.T
    x = np.zeros((M, T))
    for i, (load, start) in enumerate(zip(inst.loads, starts)):
        if start is None:
            continue
        if not (1 <= start <= T - load.tau + 1):
            raise ValidationError(
                f"load {load.id!r}: start {start} outside [1, {T - load.tau + 1}]"
            )
        x[i, start - 1] = 1.0
    return x


def evaluate_schedule(inst: Instance, starts):
    """Objective and balancing output of a binary start assignment.

    Builds the binary x, completes the status variables, sets
    q_t = max(0, demand_t - renewable_t) and evaluates the planner
    objective. Returns (objective, q).
    """
    if len(starts) != inst.n_loads:
        raise ValidationError(f"got {len(starts)} starts for {inst.n_loads} loads")
    x = _starts_to_x(inst, starts)
    y, z = planner.complete_yz(inst, x)
    demand = planner.aggregate_demand(inst, x)
    q = np.maximum(0.0, demand - inst.generator.renewable)
    return planner.instance_objective(inst, x, y, z, q), q


def _per_start_terms(inst: Instance):
    """Per load: candidate starts, net fixed term (disutility - utility)
    per start, and the demand profile each start induces."""
    T = inst.grid.T
    options = []
    for load in inst.loads:
        n_early = T - load.tau + 1
        starts = list(range(1, n_early + 1)) + [None]
        fixed = np.zeros(len(starts))
        profiles = np.zeros((len(starts), T))
        for k, start in enumerate(starts[:-1]):
            x = np.zeros((1, T))
            x[0, start - 1] = 1.0
            shell = Instance(inst.grid, (load,), inst.generator)
            y, z = planner.complete_yz(shell, x)
            fixed[k] = (
                float(load.dis_start @ (1.0 - y[0]))
                + float(load.dis_end @ (1.0 - z[0]))
                - load.ubar
            )
            profiles[k] = load.level * planner.running_profile(load.tau, x[0])
        options.append((starts, fixed, profiles))
    return options


def brute_force_schedule(inst: Instance) -> BinarySchedule:
    """Enumerate every joint start assignment and return the minimizer.

    Assignments are visited in lexicographic order with numeric starts
    before None, so ties resolve to the earliest starts. The number of
    assignments prod_i (T - tau_i + 2) must stay within the enumeration
    budget of 1e7.
    """
    T = inst.grid.T
    options = _per_start_terms(inst)
    counts = [len(starts) for starts, _, _ in options]
    total = 1
    for cnt in counts:
        total *= cnt
        if total > ENUMERATION_BUDGET:
            raise ValidationError(
                f"enumeration budget exceeded: more than {ENUMERATION_BUDGET} assignments"
            )

    g = inst.generator.renewable
    best_obj = np.inf
    best_index = 0
    index_base = 0
    for chunk in _chunked_assignments(options, T):
        demand, fixed = chunk
        q = np.maximum(0.0, demand - g[None, :])
        obj = np.sum(inst.generator.cost(q), axis=1) + fixed
        k = int(np.argmin(obj))
        if obj[k] < best_obj:
            best_obj = float(obj[k])
            best_index = index_base + k
        index_base += obj.shape[0]

    starts = _unrank(best_index, counts, options)
    objective, q = evaluate_schedule(inst, starts)
    return BinarySchedule(starts=tuple(starts), q=q, objective=objective)


def _chunked_assignments(options, T):
    """Yield (demand, fixed) arrays for blocks of assignments in
    lexicographic order over the per-load option lists."""
    counts = [len(starts) for starts, _, _ in options]
    total = int(np.prod(counts)) if counts else 1
    if not options:
        yield np.zeros((1, T)), np.zeros(1)
        return
    suffix = np.ones(len(counts) + 1, dtype=np.int64)
    for i in range(len(counts) - 1, -1, -1):
        suffix[i] = suffix[i + 1] * counts[i]
    for lo in range(0, total, _CHUNK):
        hi = min(total, lo + _CHUNK)
        idx = np.arange(lo, hi, dtype=np.int64)
        demand = np.zeros((hi - lo, T))
        fixed = np.zeros(hi - lo)
        for i, (_, fixed_i, profiles_i) in enumerate(options):
            choice = (idx // suffix[i + 1]) % counts[i]
            demand += profiles_i[choice]
            fixed += fixed_i[choice]
        yield demand, fixed


def _unrank(index, counts, options):
    starts = []
    for i in range(len(counts) - 1, -1, -1):
        starts.append(options[i][0][index % counts[i]])
        index //= counts[i]
    return list(reversed(starts))


def _node_relaxation(inst: Instance, fixed, banned, tol):
    """Bound for a node: relaxation over undecided loads with the fixed
    loads' demand folded into the balance rows and their welfare terms
    added as a constant. Returns (bound, x over undecided loads)."""
    T = inst.grid.T
    free_idx = [i for i in range(inst.n_loads) if fixed[i] is _UNDECIDED]
    constant = 0.0
    fixed_demand = np.zeros(T)
    for i, load in enumerate(inst.loads):
        if fixed[i] is _UNDECIDED or fixed[i] is None:
            continue
        x = np.zeros((1, T))
        x[0, fixed[i] - 1] = 1.0
        shell = Instance(inst.grid, (load,), inst.generator)
        y, z = planner.complete_yz(shell, x)
        constant += (
            float(load.dis_start @ (1.0 - y[0]))
            + float(load.dis_end @ (1.0 - z[0]))
            - load.ubar
        )
        fixed_demand += load.level * planner.running_profile(load.tau, x[0])

    sub = Instance(
        inst.grid,
        tuple(inst.loads[i] for i in free_idx),
        # residual renewable can go negative once fixed demand exceeds it
        GeneratorModel(
            inst.generator.a, inst.generator.b, inst.generator.renewable - fixed_demand
        ),
    )
    masks = np.zeros((len(free_idx), T), dtype=bool)
    for k, i in enumerate(free_idx):
        n_early = T - inst.loads[i].tau + 1
        masks[k, :n_early] = True
        for slot in banned[i]:
            masks[k, slot - 1] = False
    problem, imap = planner.assemble_planner_qp(sub, allowed_starts=masks)
    factory = planner.newton_factory(sub, allowed_starts=masks)
    sol = qp.solve_qp(problem, tol=tol, newton_factory=factory)
    if sol.status != qp.OPTIMAL:
        raise RuntimeError(f"node relaxation failed: {sol.status} ({sol.message})")
    x = sol.primal[T : T * (1 + len(free_idx))].reshape(len(free_idx), T)
    x = np.where(masks, x, 0.0)
    bound = sol.objective + imap.constant + constant
    return bound, x, free_idx


_UNDECIDED = object()


def branch_and_bound(inst: Instance, gap_tol: float = 1e-6, node_tol: float = 1e-9):
    """Best-first branch and bound over load start decisions.

    Branches on the load with the largest fractional start mass, splitting
    on its most probable start slot: either the load starts exactly there,
    or that slot is banned for it. Terminates when the incumbent is within
    gap_tol (absolute plus relative) of the best open bound.

    Returns (BinarySchedule, BnbStats).
    """
    problems = validate_instance(inst)
    if problems:
        raise ValidationError("invalid instance: " + "; ".join(problems))

    M = inst.n_loads
    incumbent = None
    incumbent_obj = np.inf
    counter = itertools.count()

    root_fixed = [_UNDECIDED] * M
    root_banned = [set() for _ in range(M)]
    bound, x, free_idx = _node_relaxation(inst, root_fixed, root_banned, node_tol)
    heap = [(bound, next(counter), root_fixed, root_banned, x, free_idx)]
    nodes = 0
    best_bound = bound

    while heap:
        bound, _, fixed, banned, x, free_idx = heapq.heappop(heap)
        best_bound = bound
        if incumbent is not None and bound >= incumbent_obj - gap_tol * (1.0 + abs(incumbent_obj)):
            best_bound = min(best_bound, incumbent_obj)
            break
        nodes += 1

        # Fractionality per undecided load; integral nodes become incumbents.
        branch_load = None
        branch_score = _INTEGRALITY_TOL
        for k, i in enumerate(free_idx):
            score = float(np.sum(np.minimum(x[k], 1.0 - x[k]).clip(min=0.0)))
            if score > branch_score:
                branch_score = score
                branch_load = (k, i)

        if branch_load is None:
            starts = list(fixed)
            for k, i in enumerate(free_idx):
                if np.max(x[k], initial=0.0) >= 1.0 - _INTEGRALITY_TOL:
                    starts[i] = int(np.argmax(x[k])) + 1
                else:
                    starts[i] = None
            obj, q = evaluate_schedule(inst, starts)
            if obj < incumbent_obj:
                incumbent_obj = obj
                incumbent = BinarySchedule(starts=tuple(starts), q=q, objective=obj)
            continue

        k, i = branch_load
        t_star = int(np.argmax(x[k])) + 1

        fixed_child = list(fixed)
        fixed_child[i] = t_star
        b1, x1, f1 = _node_relaxation(inst, fixed_child, banned, node_tol)
        if incumbent is None or b1 < incumbent_obj - gap_tol:
            heapq.heappush(heap, (b1, next(counter), fixed_child, banned, x1, f1))

        banned_child = [set(b) for b in banned]
        banned_child[i].add(t_star)
        b2, x2, f2 = _node_relaxation(inst, fixed, banned_child, node_tol)
        if incumbent is None or b2 < incumbent_obj - gap_tol:
            heapq.heappush(heap, (b2, next(counter), fixed, banned_child, x2, f2))

    if incumbent is None:
        # All branches pruned against the all-None fallback.
        starts = tuple([None] * M)
        obj, q = evaluate_schedule(inst, starts)
        incumbent = BinarySchedule(starts=starts, q=q, objective=obj)
        incumbent_obj = obj
    if not heap:
        best_bound = incumbent_obj

    stats = BnbStats(
        nodes_explored=nodes,
        best_bound=float(min(best_bound, incumbent_obj)),
        incumbent_objective=float(incumbent_obj),
    )
    return incumbent, stats
