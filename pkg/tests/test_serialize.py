import json

import numpy as np
import pytest

from flexgrid import serialize
from flexgrid.equilibrium import Allocation
from flexgrid.model import ValidationError
from flexgrid.planner import PriceSet, derive_prices, solve_relaxation

from conftest import random_instance


def test_instance_roundtrip_preserves_digest(rng):
    inst = random_instance(rng)
    data = serialize.instance_to_dict(inst)
    again = serialize.instance_to_dict(serialize.instance_from_dict(data))
    assert serialize.digest(data) == serialize.digest(again)
    assert data == again


def test_allocation_and_prices_roundtrip(rng):
    inst = random_instance(rng, max_loads=3, max_T=8)
    sol, duals = solve_relaxation(inst, tol=1e-9)
    alloc = Allocation.from_solution(sol)
    prices = derive_prices(inst, duals)

    alloc2 = serialize.allocation_from_dict(
        json.loads(json.dumps(serialize.allocation_to_dict(alloc)))
    )
    np.testing.assert_array_equal(alloc.x, alloc2.x)
    np.testing.assert_array_equal(alloc.q, alloc2.q)

    prices2 = serialize.prices_from_dict(
        json.loads(json.dumps(serialize.prices_to_dict(prices)))
    )
    np.testing.assert_array_equal(prices.p_con, prices2.p_con)
    np.testing.assert_array_equal(prices.p_gen, prices2.p_gen)


def test_malformed_files_raise_validation_error():
    with pytest.raises(ValidationError):
        serialize.instance_from_dict({"grid": {"T": 2}})
    with pytest.raises(ValidationError):
        serialize.allocation_from_dict({"x": [[0.0]]})
    with pytest.raises(ValidationError):
        serialize.prices_from_dict({"p_con": [[0.0]]})


def test_canonical_json_is_sorted_and_stable():
    a = serialize.canonical_json({"b": 1.5, "a": [1.0, 2.0]})
    b = serialize.canonical_json({"a": [1.0, 2.0], "b": 1.5})
    assert a == b
    assert a.index('"a"') < a.index('"b"')


def test_qty_tags_units():
    tagged = serialize.qty(np.float64(2.5), "kW")
    assert tagged == {"value": 2.5, "unit": "kW"}
    assert isinstance(tagged["value"], float)
    arr = serialize.qty(np.array([1.0, 2.0]), "currency")
    assert arr == {"value": [1.0, 2.0], "unit": "currency"}
