"""Domain types for flexible non-preemptive load scheduling.

An instance couples a discrete time grid, a set of load types and a
generator. Each load demands a fixed power level for a fixed number of
consecutive slots, earns a flat service utility when activated, and
reports per-slot disutility vectors for starting before / still running
after its preferred window. The generator has a quadratic thermal cost
and a renewable trace with zero marginal cost.

Slot indices are 1-based in every interface (t = 1..T). Vectors of
length T store slot t at position t-1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "TimeGrid",
    "LoadType",
    "GeneratorModel",
    "Instance",
    "quadratic_disutility",
    "inflexible_disutility",
    "validate_instance",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def _as_vector(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Discrete scheduling horizon of T slots of fixed duration."""

    T: int
    slot_minutes: int = 15

    @property
    def slot_hours(self) -> float:
        return self.slot_minutes / 60.0


@dataclass(frozen=True)
class LoadType:
    """One class of non-preemptive load.

    tau is the service duration in slots, level the power draw in kW
    while running, ubar the utility earned if the load is activated.
    dis_start[t-1] is the penalty for having started service by slot t,
    dis_end[t-1] the penalty for still being in service at slot t; both
    are charged proportionally to the fraction of the load affected.
    """

    id: str
    tau: int
    level: float
    ubar: float
    dis_start: np.ndarray
    dis_end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dis_start", _as_vector(self.dis_start, "dis_start"))
        object.__setattr__(self, "dis_end", _as_vector(self.dis_end, "dis_end"))


@dataclass(frozen=True)
class GeneratorModel:
    """Thermal generator with cost a*q**2 + b*q plus a renewable trace."""

    a: float
    b: float
    renewable: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "renewable", _as_vector(self.renewable, "renewable"))

    def cost(self, q):
        q = np.asarray(q, dtype=float)
        return self.a * q * q + self.b * q

    def marginal_cost(self, q):
        q = np.asarray(q, dtype=float)
        return 2.0 * self.a * q + self.b

    def best_output(self, price):
        """Profit-maximizing thermal output at a given per-slot price."""
        price = np.asarray(price, dtype=float)
        return np.maximum(0.0, (price - self.b) / (2.0 * self.a))


@dataclass(frozen=True)
class Instance:
    grid: TimeGrid
    loads: tuple
    generator: GeneratorModel

    def __post_init__(self):
        object.__setattr__(self, "loads", tuple(self.loads))

    @property
    def n_loads(self) -> int:
        return len(self.loads)


def quadratic_disutility(t_start, t_end, alpha, grid):
    """Disutility vectors growing quadratically outside [t_start, t_end].

    dis_start[t-1] = alpha * (t_start - t)**2 for t < t_start, zero after;
    dis_end[t-1] = alpha * (t - t_end)**2 for t > t_end, zero before.
    """
    T = grid.T
    if not (1 <= t_start <= t_end <= T):
        raise ValidationError(
            f"need 1 <= t_start <= t_end <= T, got t_start={t_start}, t_end={t_end}, T={T}"
        )
    if alpha < 0:
        raise ValidationError(f"alpha must be nonnegative, got {alpha}")
    t = np.arange(1, T + 1, dtype=float)
    dis_start = np.where(t < t_start, alpha * (t_start - t) ** 2, 0.0)
    dis_end = np.where(t > t_end, alpha * (t - t_end) ** 2, 0.0)
    return dis_start, dis_end


def inflexible_disutility(t_on, alpha, grid):
    """On-demand disutility: zero exactly at t_on, flat maximum elsewhere.

    The plateau K = alpha * max(t_on**2, (T - t_on)**2) equals the largest
    value the quadratic shape could reach on this horizon, which makes any
    start other than t_on essentially prohibitive.
    """
    T = grid.T
    if not (1 <= t_on <= T):
        raise ValidationError(f"need 1 <= t_on <= T, got t_on={t_on}, T={T}")
    if alpha < 0:
        raise ValidationError(f"alpha must be nonnegative, got {alpha}")
    K = alpha * max(t_on**2, (T - t_on) ** 2)
    t = np.arange(1, T + 1, dtype=float)
    dis_start = np.where(t < t_on, K, 0.0)
    dis_end = np.where(t > t_on, K, 0.0)
    return dis_start, dis_end


def validate_instance(inst: Instance):
    """Return a list of invariant violations; empty list means valid."""
    problems = []
    T = inst.grid.T
    if T < 1:
        problems.append(f"grid: T must be >= 1, got {T}")
    if inst.grid.slot_minutes < 1:
        problems.append(f"grid: slot_minutes must be >= 1, got {inst.grid.slot_minutes}")

    seen = set()
    for load in inst.loads:
        lid = load.id
        if lid in seen:
            problems.append(f"load {lid!r}: duplicate id")
        seen.add(lid)
        if not (1 <= load.tau <= T):
            problems.append(f"load {lid!r}: tau={load.tau} outside [1, T={T}]")
        if not load.level > 0:
            problems.append(f"load {lid!r}: level must be positive, got {load.level}")
        if load.ubar < 0:
            problems.append(f"load {lid!r}: ubar must be nonnegative, got {load.ubar}")
        for name, vec in (("dis_start", load.dis_start), ("dis_end", load.dis_end)):
            if len(vec) != T:
                problems.append(f"load {lid!r}: {name} has length {len(vec)}, expected {T}")
            elif np.any(vec < 0) or not np.all(np.isfinite(vec)):
                problems.append(f"load {lid!r}: {name} must be finite and nonnegative")

    gen = inst.generator
    if not gen.a > 0:
        problems.append(f"generator: quadratic coefficient a must be positive for strict convexity, got {gen.a}")
    if gen.b < 0:
        problems.append(f"generator: linear coefficient b must be nonnegative, got {gen.b}")
    if len(gen.renewable) != T:
        problems.append(f"generator: renewable has length {len(gen.renewable)}, expected {T}")
    elif np.any(gen.renewable < 0) or not np.all(np.isfinite(gen.renewable)):
        problems.append("generator: renewable must be finite and nonnegative")

    return problems
