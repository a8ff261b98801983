"""JSON schemas and deterministic writers for instances, allocations,
prices and run reports.

Every numeric field in a report is wrapped as {"value": ..., "unit": ...}
so serialized numbers always carry their unit. JSON is written with
sorted keys and repr-exact floats; identical inputs produce byte-identical
files.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .equilibrium import Allocation, EquilibriumReport
from .model import GeneratorModel, Instance, LoadType, TimeGrid, ValidationError
from .planner import PriceSet

__all__ = [
    "qty",
    "canonical_json",
    "digest",
    "write_json",
    "write_csv_rows",
    "instance_to_dict",
    "instance_from_dict",
    "allocation_to_dict",
    "allocation_from_dict",
    "prices_to_dict",
    "prices_from_dict",
    "equilibrium_report_to_dict",
]

CURRENCY = "currency"
KW = "kW"
PRICE_ENERGY = "currency/kW/slot"


def qty(value, unit):
    """Unit-tagged numeric leaf for reports."""
    if isinstance(value, np.ndarray):
        value = value.tolist()
    elif isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return {"value": value, "unit": unit}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def digest(obj) -> str:
    """Content digest of a JSON-serializable object."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))


def write_csv_rows(path, header, rows):
    """Plain deterministic CSV: repr for floats, str for the rest."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def instance_to_dict(inst: Instance) -> dict:
    return {
        "grid": {"T": inst.grid.T, "slot_minutes": inst.grid.slot_minutes},
        "loads": [
            {
                "id": load.id,
                "tau_slots": load.tau,
                "level_kw": float(load.level),
                "utility": float(load.ubar),
                "dis_start": load.dis_start.tolist(),
                "dis_end": load.dis_end.tolist(),
            }
            for load in inst.loads
        ],
        "generator": {
            "cost_a": float(inst.generator.a),
            "cost_b": float(inst.generator.b),
            "renewable_kw": inst.generator.renewable.tolist(),
        },
        "units": {
            "level_kw": KW,
            "renewable_kw": KW,
            "utility": CURRENCY,
            "dis_start": CURRENCY + "/slot",
            "dis_end": CURRENCY + "/slot",
            "cost_a": CURRENCY + "/kW^2/slot",
            "cost_b": CURRENCY + "/kW/slot",
        },
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        grid = TimeGrid(T=int(data["grid"]["T"]), slot_minutes=int(data["grid"].get("slot_minutes", 15)))
        loads = tuple(
            LoadType(
                id=str(entry["id"]),
                tau=int(entry["tau_slots"]),
                level=float(entry["level_kw"]),
                ubar=float(entry["utility"]),
                dis_start=np.asarray(entry["dis_start"], dtype=float),
                dis_end=np.asarray(entry["dis_end"], dtype=float),
            )
            for entry in data["loads"]
        )
        gen = GeneratorModel(
            a=float(data["generator"]["cost_a"]),
            b=float(data["generator"]["cost_b"]),
            renewable=np.asarray(data["generator"]["renewable_kw"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed instance file: {exc}") from exc
    return Instance(grid, loads, gen)


def allocation_to_dict(alloc: Allocation) -> dict:
    return {
        "x": np.asarray(alloc.x).tolist(),
        "y": np.asarray(alloc.y).tolist(),
        "z": np.asarray(alloc.z).tolist(),
        "q_kw": np.asarray(alloc.q).tolist(),
        "units": {"x": "probability", "y": "probability", "z": "probability", "q_kw": KW},
    }


def allocation_from_dict(data: dict) -> Allocation:
    try:
        return Allocation(
            x=np.asarray(data["x"], dtype=float),
            y=np.asarray(data["y"], dtype=float),
            z=np.asarray(data["z"], dtype=float),
            q=np.asarray(data["q_kw"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed allocation file: {exc}") from exc


def prices_to_dict(prices: PriceSet) -> dict:
    return {
        "p_con": np.asarray(prices.p_con).tolist(),
        "p_gen": np.asarray(prices.p_gen).tolist(),
        "p_start": np.asarray(prices.p_start).tolist(),
        "p_end": np.asarray(prices.p_end).tolist(),
        "units": {
            "p_con": CURRENCY,
            "p_gen": PRICE_ENERGY,
            "p_start": CURRENCY,
            "p_end": CURRENCY,
        },
    }


def prices_from_dict(data: dict) -> PriceSet:
    try:
        return PriceSet(
            p_con=np.asarray(data["p_con"], dtype=float),
            p_gen=np.asarray(data["p_gen"], dtype=float),
            p_start=np.asarray(data["p_start"], dtype=float),
            p_end=np.asarray(data["p_end"], dtype=float),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed prices file: {exc}") from exc


def equilibrium_report_to_dict(report: EquilibriumReport) -> dict:
    return {
        "is_equilibrium": bool(report.is_equilibrium),
        "tolerance": report.tol,
        "consumer_gaps": qty(np.asarray(report.consumer_gaps), CURRENCY),
        "generator_gap": qty(report.generator_gap, CURRENCY),
        "iso_gap": qty(report.iso_gap, CURRENCY),
        "max_gap": qty(report.max_gap(), CURRENCY),
    }
