"""Charging-session and generation data ingestion.

Turns session summary CSVs (one row per charging session) and renewable
generation CSVs into scheduling instances, and synthesizes demand-surge
scenarios by resampling a pool of extra sessions.

Sessions CSV columns: session_id, connection_time, done_charging_time,
disconnection_time, kwh_delivered (ISO-8601 timestamps, dot-decimal kWh).
Generation CSV columns: timestamp, kw. Parsers reject unknown columns
unless lenient parsing is requested; malformed rows are collected with
their line numbers instead of aborting the parse.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime

import numpy as np

from .model import (
    Instance,
    LoadType,
    TimeGrid,
    ValidationError,
    inflexible_disutility,
    quadratic_disutility,
)

__all__ = [
    "ChargingSession",
    "ScenarioConfig",
    "ParsedSessions",
    "RowIssue",
    "parse_sessions",
    "write_sessions_csv",
    "session_to_load",
    "parse_generation",
    "build_surge",
]

SESSION_COLUMNS = [
    "session_id",
    "connection_time",
    "done_charging_time",
    "disconnection_time",
    "kwh_delivered",
]
GENERATION_COLUMNS = ["timestamp", "kw"]

SURGE_LEVELS = (0, 25, 50, 75, 100)
FLEXIBILITY_MODES = ("quadratic", "on_demand")


@dataclass(frozen=True)
class ChargingSession:
    session_id: str
    connection: datetime
    done_charging: datetime
    disconnection: datetime
    energy_kwh: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Case-study knobs: disutility scale, service utility, cost shape,
    surge level and the flexibility mode used to synthesize preferences."""

    alpha: float = 0.01
    ubar: float = 100.0
    cost_a: float = 0.5
    cost_b: float = 0.0
    surge_pct: int = 0
    seed: int = 0
    flexibility_mode: str = "quadratic"

    def __post_init__(self):
        if self.surge_pct not in SURGE_LEVELS:
            raise ValidationError(f"surge_pct must be one of {SURGE_LEVELS}, got {self.surge_pct}")
        if self.flexibility_mode not in FLEXIBILITY_MODES:
            raise ValidationError(
                f"flexibility_mode must be one of {FLEXIBILITY_MODES}, got {self.flexibility_mode!r}"
            )


@dataclass(frozen=True)
class RowIssue:
    line: int
    message: str


@dataclass
class ParsedSessions:
    sessions: list = field(default_factory=list)
    issues: list = field(default_factory=list)

    @property
    def n_rejected_midnight(self) -> int:
        return sum(1 for issue in self.issues if "spans midnight" in issue.message)


def _open_stream(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, "r", newline=""), True


def _check_header(header, expected, lenient, what):
    missing = [c for c in expected if c not in header]
    if missing:
        raise ValidationError(f"{what}: missing columns {missing}")
    unknown = [c for c in header if c not in expected]
    if unknown and not lenient:
        raise ValidationError(
            f"{what}: unknown columns {unknown} (use lenient parsing to ignore)"
        )


def _parse_ts(text):
    return datetime.fromisoformat(text.strip())


def parse_sessions(source, grid: TimeGrid, day: date, lenient: bool = False) -> ParsedSessions:
    """Parse a sessions CSV, keeping rows whose connection falls on day.

    Malformed rows (bad timestamps, negative energy, midnight-spanning
    sessions) are reported with their line numbers and skipped; a missing
    or unexpected header aborts with an error.
    """
    stream, owned = _open_stream(source)
    result = ParsedSessions()
    try:
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            raise ValidationError("sessions csv: empty file, header row required")
        _check_header(reader.fieldnames, SESSION_COLUMNS, lenient, "sessions csv")
        for row in reader:
            line = reader.line_num
            try:
                connection = _parse_ts(row["connection_time"])
                done = _parse_ts(row["done_charging_time"])
                disconnection = _parse_ts(row["disconnection_time"])
            except ValueError as exc:
                result.issues.append(RowIssue(line, f"unparseable timestamp: {exc}"))
                continue
            try:
                energy = float(row["kwh_delivered"])
            except ValueError:
                result.issues.append(
                    RowIssue(line, f"unparseable kwh_delivered {row['kwh_delivered']!r}")
                )
                continue
            if connection.date() != day:
                continue
            if energy < 0:
                result.issues.append(RowIssue(line, f"negative energy {energy}"))
                continue
            if done < connection or disconnection < connection:
                result.issues.append(RowIssue(line, "timestamps out of order"))
                continue
            if done.date() != day or disconnection.date() != day:
                result.issues.append(RowIssue(line, "session spans midnight"))
                continue
            result.sessions.append(
                ChargingSession(
                    session_id=row["session_id"].strip(),
                    connection=connection,
                    done_charging=done,
                    disconnection=disconnection,
                    energy_kwh=energy,
                )
            )
    finally:
        if owned:
            stream.close()
    return result


def write_sessions_csv(sessions, target):
    """Write sessions in the canonical column order (round-trip safe)."""
    stream, owned = (target, False) if hasattr(target, "write") else (open(target, "w", newline=""), True)
    try:
        writer = csv.writer(stream)
        writer.writerow(SESSION_COLUMNS)
        for s in sessions:
            writer.writerow(
                [
                    s.session_id,
                    s.connection.isoformat(),
                    s.done_charging.isoformat(),
                    s.disconnection.isoformat(),
                    repr(float(s.energy_kwh)),
                ]
            )
    finally:
        if owned:
            stream.close()


def _slot_of(ts: datetime, grid: TimeGrid) -> int:
    minutes = ts.hour * 60 + ts.minute + ts.second / 60.0
    return int(minutes // grid.slot_minutes) + 1


def session_to_load(session: ChargingSession, grid: TimeGrid, cfg: ScenarioConfig) -> LoadType:
    """Convert one session into a load type.

    Duration is the charging span rounded up to whole slots; the power
    level spreads the delivered energy evenly over that duration, so
    energy is conserved exactly. The preferred window runs from the
    connection slot to the disconnection slot (clamped to the horizon).
    """
    T = grid.T
    t_connect = _slot_of(session.connection, grid)
    span_hours = (session.done_charging - session.connection).total_seconds() / 3600.0
    tau = math.ceil(span_hours / grid.slot_hours)
    if tau < 1:
        raise ValidationError(f"session {session.session_id!r}: instantaneous charge rejected")
    if t_connect + tau - 1 > T:
        raise ValidationError(
            f"session {session.session_id!r}: service window extends past the horizon"
        )
    level = session.energy_kwh / (tau * grid.slot_hours)
    if level <= 0:
        raise ValidationError(f"session {session.session_id!r}: zero energy delivered")
    t_disconnect = min(_slot_of(session.disconnection, grid), T)
    if cfg.flexibility_mode == "quadratic":
        dis_start, dis_end = quadratic_disutility(t_connect, max(t_connect, t_disconnect), cfg.alpha, grid)
    else:
        dis_start, dis_end = inflexible_disutility(t_connect, cfg.alpha, grid)
    return LoadType(
        id=session.session_id,
        tau=tau,
        level=level,
        ubar=cfg.ubar,
        dis_start=dis_start,
        dis_end=dis_end,
    )


def parse_generation(source, grid: TimeGrid, lenient: bool = False) -> np.ndarray:
    """Parse a generation CSV into a per-slot kW vector of length T.

    Finer series are averaged within each slot; coarser ones are held
    constant across the slots they cover. Negative values and gaps that
    leave slots unfilled are errors.
    """
    stream, owned = _open_stream(source)
    try:
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            raise ValidationError("generation csv: empty file, header row required")
        _check_header(reader.fieldnames, GENERATION_COLUMNS, lenient, "generation csv")
        samples = []
        for row in reader:
            try:
                ts = _parse_ts(row["timestamp"])
                kw = float(row["kw"])
            except ValueError as exc:
                raise ValidationError(f"generation csv line {reader.line_num}: {exc}") from exc
            if kw < 0:
                raise ValidationError(f"generation csv line {reader.line_num}: negative value {kw}")
            samples.append((ts, kw))
    finally:
        if owned:
            stream.close()
    if not samples:
        raise ValidationError("generation csv: no data rows")

    T = grid.T
    sums = np.zeros(T)
    counts = np.zeros(T, dtype=int)
    for ts, kw in samples:
        slot = _slot_of(ts, grid)
        if not (1 <= slot <= T):
            raise ValidationError(f"generation csv: timestamp {ts} falls outside the grid")
        sums[slot - 1] += kw
        counts[slot - 1] += 1
    if counts[0] == 0:
        raise ValidationError("generation csv: first slot has no sample to hold from")
    g = np.zeros(T)
    for t in range(T):
        if counts[t] > 0:
            g[t] = sums[t] / counts[t]
        else:
            g[t] = g[t - 1]  # hold the last coarse sample constant
    return g


def build_surge(base: Instance, pool, surge_pct: int, seed) -> Instance:
    """Append loads sampled (with replacement) from the pool until the
    added slot-energy reaches surge_pct percent of the base total.

    Sampling depends only on the pool order, the target and the seed, so
    pools that differ only in disutility synthesis (flexibility modes)
    receive identical added session identities.
    """
    if surge_pct not in SURGE_LEVELS:
        raise ValidationError(f"surge_pct must be one of {SURGE_LEVELS}, got {surge_pct}")
    if surge_pct == 0:
        return base
    if not pool:
        raise ValidationError("surge requested but the session pool is empty")
    base_energy = sum(load.tau * load.level for load in base.loads)
    target = base_energy * surge_pct / 100.0
    rng = np.random.default_rng(seed)
    added = []
    total = 0.0
    while total < target:
        pick = pool[int(rng.integers(len(pool)))]
        added.append(replace(pick, id=f"{pick.id}#s{len(added)}"))
        total += pick.tau * pick.level
    return Instance(base.grid, base.loads + tuple(added), base.generator)
