import numpy as np
import pytest

from flexgrid.model import (
    GeneratorModel,
    Instance,
    LoadType,
    TimeGrid,
    quadratic_disutility,
)


def random_instance(rng, max_loads=6, max_T=24, max_tau=6, alpha_scale=0.2):
    """Random well-scaled instance: quadratic disutility windows, modest
    utilities and levels, bell-ish renewable trace."""
    T = int(rng.integers(2, max_T + 1))
    grid = TimeGrid(T=T)
    M = int(rng.integers(1, max_loads + 1))
    loads = []
    for i in range(M):
        tau = int(rng.integers(1, min(max_tau, T) + 1))
        t_c = int(rng.integers(1, T - tau + 2))
        t_d = int(min(T, t_c + rng.integers(0, tau + 2)))
        ds, de = quadratic_disutility(t_c, t_d, float(rng.uniform(0, alpha_scale)), grid)
        loads.append(
            LoadType(
                id=f"l{i}",
                tau=tau,
                level=float(rng.uniform(0.3, 2.0)),
                ubar=float(rng.uniform(0.2, 6.0)),
                dis_start=ds,
                dis_end=de,
            )
        )
    gen = GeneratorModel(
        a=float(rng.uniform(0.2, 1.5)),
        b=float(rng.uniform(0.0, 0.4)),
        renewable=rng.uniform(0.0, 1.5, T),
    )
    return Instance(grid, tuple(loads), gen)


def single_slot_instance(ubar=10.0):
    """One load on a one-slot horizon; planner optimum is 0.5 - ubar when
    serving beats the cost, with fractional service below that."""
    grid = TimeGrid(T=1)
    load = LoadType("a", 1, 1.0, ubar, np.zeros(1), np.zeros(1))
    return Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(1)))


def two_slot_instance(ubar=10.0):
    """Same load on two slots: binary optimum -9.5 ties between starts,
    the relaxation spreads mass and reaches -9.75."""
    grid = TimeGrid(T=2)
    load = LoadType("a", 1, 1.0, ubar, np.zeros(2), np.zeros(2))
    return Instance(grid, (load,), GeneratorModel(0.5, 0.0, np.zeros(2)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
