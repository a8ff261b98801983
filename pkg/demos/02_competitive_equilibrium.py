"""Certify that planner prices support a competitive equilibrium.

At the derived prices, no consumer can do better than the planner's
schedule, the generator's closed-form response reproduces the planner's
thermal output, and the system operator finds the schedule balanced.
Doubling the activation prices breaks the certificate: consumers would
rather walk away.
"""
import numpy as np

from flexgrid import (
    Allocation,
    GeneratorModel,
    Instance,
    LoadType,
    PriceSet,
    TimeGrid,
    derive_prices,
    quadratic_disutility,
    solve_relaxation,
    verify_equilibrium,
)

rng = np.random.default_rng(7)
T = 16
grid = TimeGrid(T=T)
loads = []
for i in range(4):
    tau = int(rng.integers(1, 5))
    t_c = int(rng.integers(1, T - tau + 2))
    ds, de = quadratic_disutility(t_c, min(T, t_c + 3), 0.08, grid)
    loads.append(LoadType(f"load{i}", tau, float(rng.uniform(0.5, 2.0)), 6.0, ds, de))
inst = Instance(grid, tuple(loads), GeneratorModel(0.5, 0.1, rng.uniform(0, 1.0, T)))

sol, duals = solve_relaxation(inst, tol=1e-9)
prices = derive_prices(inst, duals)
alloc = Allocation.from_solution(sol)

report = verify_equilibrium(inst, alloc, prices, tol=1e-5)
print("equilibrium at derived prices:", report.is_equilibrium)
print("  consumer gaps:", np.array2string(report.consumer_gaps, precision=2))
print(f"  generator gap: {report.generator_gap:.2e}   iso gap: {report.iso_gap:.2e}")

doubled = PriceSet(2.0 * prices.p_con, prices.p_gen, prices.p_start, prices.p_end)
broken = verify_equilibrium(inst, alloc, doubled, tol=1e-5)
print("\nafter doubling activation prices:", broken.is_equilibrium)
print("  worst consumer gap:", f"{broken.consumer_gaps.max():.4f}",
      "(consumers would deviate to not starting at all)")
