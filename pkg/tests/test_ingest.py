import io
from datetime import date

import numpy as np
import pytest

from flexgrid.model import GeneratorModel, Instance, LoadType, TimeGrid, ValidationError
from flexgrid.ingest import (
    ChargingSession,
    ScenarioConfig,
    build_surge,
    parse_generation,
    parse_sessions,
    session_to_load,
    write_sessions_csv,
)

GRID = TimeGrid(T=96, slot_minutes=15)
DAY = date(2018, 5, 28)

HEADER = "session_id,connection_time,done_charging_time,disconnection_time,kwh_delivered\n"


def parse(text, **kw):
    return parse_sessions(io.StringIO(text), GRID, DAY, **kw)


def test_parse_single_session():
    res = parse(HEADER + "s1,2018-05-28T08:00:00,2018-05-28T13:00:00,2018-05-28T17:00:00,25\n")
    assert len(res.sessions) == 1 and not res.issues
    s = res.sessions[0]
    assert s.session_id == "s1" and s.energy_kwh == 25.0


def test_parse_empty_file_with_header():
    res = parse(HEADER)
    assert res.sessions == [] and res.issues == []


def test_parse_rejects_negative_energy_with_line():
    res = parse(HEADER + "bad,2018-05-28T08:00:00,2018-05-28T09:00:00,2018-05-28T09:00:00,-1\n")
    assert res.sessions == []
    assert len(res.issues) == 1 and res.issues[0].line == 2
    assert "negative" in res.issues[0].message


def test_parse_rejects_bad_timestamp_with_line():
    res = parse(HEADER + "bad,nope,2018-05-28T09:00:00,2018-05-28T09:00:00,1\n")
    assert len(res.issues) == 1 and res.issues[0].line == 2


def test_parse_missing_column_aborts():
    with pytest.raises(ValidationError):
        parse("session_id,connection_time\nxx,2018-05-28T08:00:00\n")


def test_parse_unknown_column_needs_lenient():
    text = (
        "session_id,connection_time,done_charging_time,disconnection_time,kwh_delivered,extra\n"
        "s1,2018-05-28T08:00:00,2018-05-28T09:00:00,2018-05-28T10:00:00,4,hi\n"
    )
    with pytest.raises(ValidationError):
        parse(text)
    res = parse(text, lenient=True)
    assert len(res.sessions) == 1


def test_parse_filters_other_days_silently():
    res = parse(HEADER + "s9,2018-05-29T08:00:00,2018-05-29T09:00:00,2018-05-29T10:00:00,4\n")
    assert res.sessions == [] and res.issues == []


def test_parse_counts_midnight_spanning():
    res = parse(HEADER + "sx,2018-05-28T23:00:00,2018-05-29T01:00:00,2018-05-29T02:00:00,4\n")
    assert res.sessions == []
    assert res.n_rejected_midnight == 1


def test_roundtrip_bit_exact():
    text = (
        HEADER
        + "s1,2018-05-28T08:00:00,2018-05-28T13:00:00,2018-05-28T17:00:00,25.0\n"
        + "s2,2018-05-28T09:07:00,2018-05-28T10:00:00,2018-05-28T11:30:00,3.3\n"
    )
    first = parse(text)
    buf = io.StringIO()
    write_sessions_csv(first.sessions, buf)
    second = parse(buf.getvalue())
    assert first.sessions == second.sessions
    buf2 = io.StringIO()
    write_sessions_csv(second.sessions, buf2)
    assert buf.getvalue() == buf2.getvalue()


def _session(conn="2018-05-28T08:00:00", done="2018-05-28T13:00:00",
             disc="2018-05-28T17:00:00", kwh=25.0):
    from datetime import datetime

    return ChargingSession(
        "s", datetime.fromisoformat(conn), datetime.fromisoformat(done),
        datetime.fromisoformat(disc), kwh,
    )


def test_session_to_load_units():
    load = session_to_load(_session(), GRID, ScenarioConfig())
    assert load.tau == 20
    assert load.level == pytest.approx(5.0)


def test_session_to_load_single_slot():
    load = session_to_load(
        _session(done="2018-05-28T08:15:00", disc="2018-05-28T09:00:00", kwh=1.0),
        GRID,
        ScenarioConfig(),
    )
    assert load.tau == 1
    assert load.level == pytest.approx(4.0)


def test_session_to_load_conserves_energy(rng):
    from datetime import datetime, timedelta

    for _ in range(30):
        start = datetime(2018, 5, 28, int(rng.integers(0, 12)), int(rng.integers(0, 60)))
        dur = timedelta(minutes=int(rng.integers(10, 300)))
        kwh = float(rng.uniform(0.5, 40.0))
        s = ChargingSession("s", start, start + dur, start + dur, kwh)
        load = session_to_load(s, GRID, ScenarioConfig())
        assert abs(load.tau * load.level * GRID.slot_hours - kwh) <= 1e-9 * kwh


def test_session_to_load_on_demand_mode():
    load = session_to_load(_session(), GRID, ScenarioConfig(flexibility_mode="on_demand"))
    t_connect = 8 * 4 + 1
    total = load.dis_start + load.dis_end
    assert total[t_connect - 1] == 0.0
    assert np.all(total[np.arange(96) != t_connect - 1] > 0)


def test_session_to_load_rejects_instant():
    s = _session(done="2018-05-28T08:00:00")
    with pytest.raises(ValidationError):
        session_to_load(s, GRID, ScenarioConfig())


def test_session_to_load_rejects_horizon_overflow():
    s = _session(conn="2018-05-28T23:30:00", done="2018-05-28T23:59:00", disc="2018-05-28T23:59:00", kwh=5.0)
    # 29 minutes from 23:30 rounds up to two slots, ending exactly at T.
    load = session_to_load(s, GRID, ScenarioConfig())
    assert load.tau == 2
    s2 = _session(conn="2018-05-28T23:50:00", done="2018-05-28T23:59:00", disc="2018-05-28T23:59:00", kwh=5.0)
    load2 = session_to_load(s2, GRID, ScenarioConfig())
    assert load2.tau == 1
    # Two slots from the final slot would run past the horizon.
    s3 = _session(conn="2018-05-28T23:50:00", done="2018-05-29T00:20:00", disc="2018-05-29T00:20:00", kwh=5.0)
    with pytest.raises(ValidationError):
        session_to_load(s3, GRID, ScenarioConfig())


def test_scenario_config_validates():
    with pytest.raises(ValidationError):
        ScenarioConfig(surge_pct=30)
    with pytest.raises(ValidationError):
        ScenarioConfig(flexibility_mode="rigid")


GEN_HEADER = "timestamp,kw\n"


def test_generation_quarter_hourly_direct():
    text = GEN_HEADER + "\n".join(
        f"2018-05-28T{m // 60:02d}:{m % 60:02d}:00,2.5" for m in range(0, 1440, 15)
    )
    g = parse_generation(io.StringIO(text), GRID)
    assert g.shape == (96,)
    assert np.all(g == 2.5)


def test_generation_hourly_held_constant():
    text = GEN_HEADER + "\n".join(f"2018-05-28T{h:02d}:00:00,{h}.0" for h in range(24))
    g = parse_generation(io.StringIO(text), GRID)
    for h in range(24):
        np.testing.assert_allclose(g[4 * h : 4 * h + 4], float(h))


def test_generation_finer_series_averaged():
    grid = TimeGrid(T=4, slot_minutes=15)
    rows = [
        ("2018-05-28T00:00:00", 1.0),
        ("2018-05-28T00:05:00", 2.0),
        ("2018-05-28T00:10:00", 3.0),
        ("2018-05-28T00:15:00", 5.0),
        ("2018-05-28T00:30:00", 7.0),
        ("2018-05-28T00:45:00", 9.0),
    ]
    text = GEN_HEADER + "\n".join(f"{t},{v}" for t, v in rows)
    g = parse_generation(io.StringIO(text), grid)
    np.testing.assert_allclose(g, [2.0, 5.0, 7.0, 9.0])


def test_generation_rejects_negative():
    text = GEN_HEADER + "2018-05-28T00:00:00,-0.1\n"
    with pytest.raises(ValidationError):
        parse_generation(io.StringIO(text), GRID)


def test_generation_requires_first_slot():
    text = GEN_HEADER + "2018-05-28T01:00:00,1.0\n"
    with pytest.raises(ValidationError):
        parse_generation(io.StringIO(text), GRID)


def _pool(n, tau=2, level=1.0):
    T = 8
    return [
        LoadType(f"p{i}", tau, level, 1.0, np.zeros(T), np.zeros(T)) for i in range(n)
    ]


def _base(n=2):
    T = 8
    grid = TimeGrid(T=T)
    loads = tuple(LoadType(f"b{i}", 2, 1.0, 1.0, np.zeros(T), np.zeros(T)) for i in range(n))
    return Instance(grid, loads, GeneratorModel(0.5, 0.0, np.zeros(T)))


def test_surge_zero_returns_base():
    base = _base()
    assert build_surge(base, _pool(3), 0, seed=1) is base


def test_surge_energy_band():
    base = _base(4)  # base energy 8
    pool = _pool(5, tau=3, level=1.5)  # each adds 4.5
    out = build_surge(base, pool, 100, seed=7)
    added = sum(l.tau * l.level for l in out.loads[4:])
    base_energy = 8.0
    assert base_energy <= added < base_energy + 4.5


def test_surge_same_seed_same_identities():
    base = _base()
    pool_a = _pool(6)
    pool_b = [
        LoadType(l.id, l.tau, l.level, l.ubar, l.dis_start + 1.0, l.dis_end) for l in pool_a
    ]
    out_a = build_surge(base, pool_a, 50, seed=3)
    out_b = build_surge(base, pool_b, 50, seed=3)
    ids_a = [l.id for l in out_a.loads[2:]]
    ids_b = [l.id for l in out_b.loads[2:]]
    assert ids_a == ids_b and len(ids_a) > 0


def test_surge_unique_ids():
    base = _base()
    out = build_surge(base, _pool(1), 100, seed=0)
    ids = [l.id for l in out.loads]
    assert len(ids) == len(set(ids))


def test_surge_empty_pool_errors():
    with pytest.raises(ValidationError):
        build_surge(_base(), [], 25, seed=0)
    with pytest.raises(ValidationError):
        build_surge(_base(), _pool(2), 33, seed=0)
