import numpy as np
import pytest

from flexgrid.model import (
    GeneratorModel,
    Instance,
    LoadType,
    TimeGrid,
    ValidationError,
)
from flexgrid.planner import (
    DualCertificate,
    RelaxedSolution,
    activation_energy_price,
    activation_flexibility_price,
    assemble_planner_qp,
    check_kkt,
    complete_yz,
    derive_prices,
    lagrangian_value,
    solve_relaxation,
)

from conftest import random_instance, single_slot_instance, two_slot_instance


# ---------------------------------------------------------------- oracles
def raw_start_count(tau, x_row, t):
    """sum_{s=1}^{t} sum_{r=max(1, s-tau+1)}^{s} x_r, written literally."""
    total = 0.0
    for s in range(1, t + 1):
        for r in range(max(1, s - tau + 1), s + 1):
            total += x_row[r - 1]
    return total


def raw_end_count(tau, x_row, t):
    T = len(x_row)
    total = 0.0
    for s in range(t, T + 1):
        for r in range(max(1, s - tau + 1), s + 1):
            total += x_row[r - 1]
    return total


def raw_balance_sum(tau, x_row, lam):
    """sum_t lam_t * (running-sum of x at t), written literally."""
    T = len(x_row)
    total = 0.0
    for t in range(1, T + 1):
        for s in range(max(1, t - tau + 1), t + 1):
            total += lam[t - 1] * x_row[s - 1]
    return total


def load_of(tau, T, level=1.0):
    return LoadType("o", tau, level, 0.0, np.zeros(T), np.zeros(T))


# --------------------------------------------------------------- assembly
def test_assembly_counts():
    grid = TimeGrid(T=2)
    load = LoadType("a", 1, 1.0, 1.0, np.zeros(2), np.zeros(2))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(2)))
    problem, imap = assemble_planner_qp(inst)
    assert problem.n == 8
    assert problem.m == 6
    assert imap.describe(0) == ("q", None, 1)
    assert imap.describe(imap.x_var(0, 2)) == ("x", 0, 2)


def test_assembly_empty_instance_serves_nothing():
    grid = TimeGrid(T=3)
    inst = Instance(grid, (), GeneratorModel(0.5, 0.0, np.ones(3)))
    sol, duals = solve_relaxation(inst)
    # The optimum sits at the origin where complementarity degenerates, so
    # the interior point leaves square-root-of-tolerance dust on q.
    np.testing.assert_allclose(sol.q, 0.0, atol=1e-4)
    assert abs(sol.objective) <= 1e-7


def test_assembly_utility_only_on_completable_starts():
    grid = TimeGrid(T=4)
    load = LoadType("a", 2, 1.0, 7.0, np.zeros(4), np.zeros(4))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(4)))
    problem, imap = assemble_planner_qp(inst)
    coeffs = [problem.linear[imap.x_var(0, t)] for t in range(1, 5)]
    assert coeffs == [-7.0, -7.0, -7.0, 0.0]


def test_assembly_constant_records_disutility_mass():
    grid = TimeGrid(T=3)
    load = LoadType("a", 1, 1.0, 0.0, np.array([1.0, 2.0, 0.0]), np.array([0.0, 0.0, 4.0]))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(3)))
    _, imap = assemble_planner_qp(inst)
    assert imap.constant == 7.0


# ------------------------------------------------------------------ solve
def test_solve_single_slot_fixture():
    sol, duals = solve_relaxation(single_slot_instance(), tol=1e-9)
    assert abs(sol.objective - (-9.5)) <= 1e-6
    assert abs(np.sum(sol.x) - 1.0) <= 1e-7
    fam = check_kkt(single_slot_instance(), sol, duals)
    assert max(v for k, v in fam.items() if not k.startswith("_")) <= 1e-6


def test_solve_low_utility_serves_fractionally():
    # Utility below the marginal cost of full service: the relaxation
    # serves the cost-balancing fraction, minimize 0.5 r^2 - 0.1 r.
    sol, _ = solve_relaxation(single_slot_instance(ubar=0.1), tol=1e-10)
    assert abs(sol.objective - (-0.005)) <= 1e-8
    assert abs(sol.x[0, 0] - 0.1) <= 1e-6


def test_solve_abundant_renewable_zeroes_lambda():
    grid = TimeGrid(T=3)
    load = LoadType("a", 2, 1.0, 5.0, np.zeros(3), np.zeros(3))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.full(3, 10.0)))
    sol, duals = solve_relaxation(inst, tol=1e-9)
    np.testing.assert_allclose(sol.q, 0.0, atol=1e-4)
    np.testing.assert_allclose(duals.lam, 0.0, atol=1e-7)


def test_solve_rejects_invalid_instance():
    grid = TimeGrid(T=2)
    load = LoadType("a", 3, 1.0, 1.0, np.zeros(2), np.zeros(2))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(2)))
    with pytest.raises(ValidationError):
        solve_relaxation(inst)


# ------------------------------------------------------------ completion
def test_complete_yz_matches_raw_double_sums():
    grid = TimeGrid(T=3)
    load = LoadType("a", 2, 1.0, 1.0, np.zeros(3), np.zeros(3))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(3)))
    x = np.array([[1.0, 0.0, 0.0]])
    y, z = complete_yz(inst, x)
    y_ref = [1.0 - raw_start_count(2, x[0], t) / 2 for t in (1, 2, 3)]
    z_ref = [1.0 - raw_end_count(2, x[0], t) / 2 for t in (1, 2, 3)]
    np.testing.assert_allclose(y[0], y_ref, atol=1e-12)
    np.testing.assert_allclose(z[0], z_ref, atol=1e-12)
    np.testing.assert_allclose(y[0], [0.5, 0.0, 0.0])
    np.testing.assert_allclose(z[0], [0.0, 0.5, 1.0])


def test_complete_yz_zero_schedule():
    grid = TimeGrid(T=4)
    load = LoadType("a", 3, 1.0, 1.0, np.zeros(4), np.zeros(4))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(4)))
    y, z = complete_yz(inst, np.zeros((1, 4)))
    assert np.all(y == 1.0) and np.all(z == 1.0)


def test_complete_yz_unit_duration_collapses(rng):
    T = 6
    grid = TimeGrid(T=T)
    load = LoadType("a", 1, 1.0, 1.0, np.zeros(T), np.zeros(T))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(T)))
    x = rng.uniform(0, 1.0 / T, (1, T))
    y, z = complete_yz(inst, x)
    np.testing.assert_allclose(y[0], 1.0 - np.cumsum(x[0]), atol=1e-12)
    np.testing.assert_allclose(z[0], 1.0 - np.cumsum(x[0][::-1])[::-1], atol=1e-12)


def test_complete_yz_random_matches_oracle(rng):
    for _ in range(25):
        T = int(rng.integers(1, 12))
        tau = int(rng.integers(1, T + 1))
        grid = TimeGrid(T=T)
        load = LoadType("a", tau, 1.0, 1.0, np.zeros(T), np.zeros(T))
        inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(T)))
        x = rng.uniform(0, 1, (1, T))
        x /= max(1.0, raw_start_count(tau, x[0], T) / tau)  # keep status in range
        y, z = complete_yz(inst, x)
        for t in range(1, T + 1):
            assert abs(y[0, t - 1] - (1 - raw_start_count(tau, x[0], t) / tau)) <= 1e-10
            assert abs(z[0, t - 1] - (1 - raw_end_count(tau, x[0], t) / tau)) <= 1e-10


def test_complete_yz_rejects_overfull_x():
    grid = TimeGrid(T=3)
    load = LoadType("a", 2, 1.0, 1.0, np.zeros(3), np.zeros(3))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(3)))
    with pytest.raises(ValidationError):
        complete_yz(inst, np.full((1, 3), 1.0))


# ---------------------------------------------------------------- prices
def test_energy_price_examples():
    np.testing.assert_allclose(
        activation_energy_price(load_of(2, 4), np.array([1.0, 2, 3, 4])), [3, 5, 7, 4]
    )
    np.testing.assert_allclose(
        activation_energy_price(load_of(1, 3, level=2.0), np.array([1.0, 2, 3])), [2, 4, 6]
    )
    lam = np.array([0.3, 1.2, 0.7, 2.0])
    assert activation_energy_price(load_of(4, 4), lam)[0] == pytest.approx(lam.sum())


def test_flexibility_price_examples():
    np.testing.assert_allclose(
        activation_flexibility_price(load_of(2, 3), np.ones(3), np.ones(3)), [8, 8, 4]
    )
    np.testing.assert_allclose(
        activation_flexibility_price(load_of(2, 3), np.zeros(3), np.zeros(3)), [0, 0, 0]
    )


def test_flexibility_price_unit_duration(rng):
    T = 5
    nu_s = rng.uniform(0, 1, T)
    nu_e = rng.uniform(0, 1, T)
    out = activation_flexibility_price(load_of(1, T), nu_s, nu_e)
    expected = [nu_s[t - 1 :].sum() + nu_e[:t].sum() for t in range(1, T + 1)]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_rearrangement_identity_balance_side(rng):
    for _ in range(300):
        T = int(rng.integers(1, 20))
        tau = int(rng.integers(1, T + 1))
        x = rng.uniform(0, 1, T)
        lam = rng.uniform(0, 1, T)
        lhs = raw_balance_sum(tau, x, lam)
        rhs = float(activation_energy_price(load_of(tau, T), lam) @ x)
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))


def test_rearrangement_identity_flexibility_side(rng):
    # Start mass on completable slots only: the published end-side price
    # coefficients encode the derivation's domain, where a start always
    # finishes inside the horizon. (Optima never place mass elsewhere.)
    for _ in range(300):
        T = int(rng.integers(1, 20))
        tau = int(rng.integers(1, T + 1))
        x = rng.uniform(0, 1, T)
        x[T - tau + 1 :] = 0.0
        nu_s = rng.uniform(0, 1, T)
        nu_e = rng.uniform(0, 1, T)
        lhs = sum(nu_s[t - 1] * raw_start_count(tau, x, t) for t in range(1, T + 1))
        lhs += sum(nu_e[t - 1] * raw_end_count(tau, x, t) for t in range(1, T + 1))
        rhs = float(activation_flexibility_price(load_of(tau, T), nu_s, nu_e) @ x)
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))


def test_derive_prices_zero_duals():
    inst = two_slot_instance()
    duals = DualCertificate(np.zeros(2), np.zeros((1, 2)), np.zeros((1, 2)))
    prices = derive_prices(inst, duals)
    assert not prices.p_con.any() and not prices.p_gen.any()
    assert not prices.p_start.any() and not prices.p_end.any()


def test_derive_prices_scales_flexibility_by_duration():
    grid = TimeGrid(T=3)
    load = LoadType("a", 2, 1.0, 1.0, np.zeros(3), np.zeros(3))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(3)))
    duals = DualCertificate(np.zeros(3), np.ones((1, 3)), np.zeros((1, 3)))
    prices = derive_prices(inst, duals)
    np.testing.assert_allclose(prices.p_start[0], [2.0, 2.0, 2.0])


def test_derive_prices_unit_duration_energy_only():
    grid = TimeGrid(T=3)
    load = LoadType("a", 1, 1.0, 1.0, np.zeros(3), np.zeros(3))
    inst = Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(3)))
    duals = DualCertificate(np.array([1.0, 2.0, 3.0]), np.zeros((1, 3)), np.zeros((1, 3)))
    prices = derive_prices(inst, duals)
    np.testing.assert_allclose(prices.p_con[0], [1.0, 2.0, 3.0])


# ------------------------------------------------------------- kkt check
def test_kkt_lambda_perturbation_detected():
    inst = single_slot_instance()
    sol, duals = solve_relaxation(inst, tol=1e-10)
    bumped = DualCertificate(duals.lam + (sol.q > 1e-6), duals.nu_start, duals.nu_end)
    fam = check_kkt(inst, sol, bumped)
    # q is 1 at the single slot, so the slackness product moves by ~1.
    assert fam["gen_complementarity"] == pytest.approx(1.0, abs=1e-6)


def test_kkt_zero_instance_exact_zeros():
    grid = TimeGrid(T=2)
    inst = Instance(grid, (), GeneratorModel(0.5, 0.0, np.zeros(2)))
    sol = RelaxedSolution(
        x=np.zeros((0, 2)), y=np.zeros((0, 2)), z=np.zeros((0, 2)),
        q=np.zeros(2), objective=0.0,
    )
    duals = DualCertificate(np.zeros(2), np.zeros((0, 2)), np.zeros((0, 2)))
    fam = check_kkt(inst, sol, duals)
    assert all(v == 0.0 for k, v in fam.items() if not k.startswith("_"))


def test_kkt_random_solutions_pass(rng):
    for _ in range(10):
        inst = random_instance(rng)
        sol, duals = solve_relaxation(inst, tol=1e-9)
        fam = check_kkt(inst, sol, duals)
        worst = max(v for k, v in fam.items() if not k.startswith("_"))
        assert worst <= 1e-6, fam


def test_activation_only_at_utility_matching_price(rng):
    # Wherever meaningful start mass sits, the reduced activation price
    # matches the utility.
    for _ in range(10):
        inst = random_instance(rng)
        sol, duals = solve_relaxation(inst, tol=1e-9)
        for i, load in enumerate(inst.loads):
            n_early = inst.grid.T - load.tau + 1
            reduced = (
                activation_energy_price(load, duals.lam)
                + activation_flexibility_price(load, duals.nu_start[i], duals.nu_end[i])
            )[:n_early]
            mass = sol.x[i][:n_early]
            for t in np.nonzero(mass > 1e-6)[0]:
                assert abs(reduced[t] - load.ubar) <= 1e-5 * (1.0 + load.ubar)


def test_thermal_output_unique_under_load_permutation(rng):
    for _ in range(5):
        inst = random_instance(rng, max_loads=5)
        sol, _ = solve_relaxation(inst, tol=1e-9)
        perm = rng.permutation(inst.n_loads)
        shuffled = Instance(inst.grid, tuple(inst.loads[i] for i in perm), inst.generator)
        sol2, _ = solve_relaxation(shuffled, tol=1e-9)
        np.testing.assert_allclose(sol.q, sol2.q, atol=1e-6)
        assert abs(sol.objective - sol2.objective) <= 1e-6 * (1.0 + abs(sol.objective))


def test_activation_mass_within_bound(rng):
    for _ in range(5):
        inst = random_instance(rng)
        sol, _ = solve_relaxation(inst, tol=1e-9)
        for i, load in enumerate(inst.loads):
            n_early = inst.grid.T - load.tau + 1
            assert np.sum(sol.x[i][:n_early]) <= 1.0 + 1e-8
            # Starts that could not finish in time carry no mass at optimum.
            assert np.all(sol.x[i][n_early:] <= 1e-6)


# ------------------------------------------------------------ lagrangian
def raw_lagrangian(inst, sol, duals):
    """Definition-form Lagrangian with the raw double sums."""
    gen = inst.generator
    total = float(np.sum(gen.cost(sol.q)))
    T = inst.grid.T
    for i, load in enumerate(inst.loads):
        total += float(load.dis_start @ (1 - sol.y[i]))
        total += float(load.dis_end @ (1 - sol.z[i]))
        total -= load.ubar * float(np.sum(sol.x[i][: T - load.tau + 1]))
    demand = np.zeros(T)
    for i, load in enumerate(inst.loads):
        for t in range(1, T + 1):
            for s in range(max(1, t - load.tau + 1), t + 1):
                demand[t - 1] += load.level * sol.x[i][s - 1]
    total += float(duals.lam @ (demand - gen.renewable - sol.q))
    for i, load in enumerate(inst.loads):
        for t in range(1, T + 1):
            total += duals.nu_start[i][t - 1] * (
                raw_start_count(load.tau, sol.x[i], t) - load.tau * (1 - sol.y[i][t - 1])
            )
            total += duals.nu_end[i][t - 1] * (
                raw_end_count(load.tau, sol.x[i], t) - load.tau * (1 - sol.z[i][t - 1])
            )
    return total


def test_lagrangian_decomposition_identity(rng):
    for _ in range(20):
        inst = random_instance(rng, max_loads=4, max_T=10)
        M, T = inst.n_loads, inst.grid.T
        x = rng.uniform(0, 0.3, (M, T))
        for i, load in enumerate(inst.loads):
            x[i, T - load.tau + 1 :] = 0.0  # completable starts only
        sol = RelaxedSolution(
            x=x,
            y=rng.uniform(0, 1, (M, T)),
            z=rng.uniform(0, 1, (M, T)),
            q=rng.uniform(0, 2, T),
            objective=0.0,
        )
        duals = DualCertificate(
            lam=rng.uniform(0, 1, T),
            nu_start=rng.uniform(0, 1, (M, T)),
            nu_end=rng.uniform(0, 1, (M, T)),
        )
        a = raw_lagrangian(inst, sol, duals)
        b = lagrangian_value(inst, sol, duals)
        assert abs(a - b) <= 1e-9 * (1.0 + abs(a))
