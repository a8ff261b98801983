"""Scheduling and pricing of flexible non-preemptive loads.

The package solves the welfare-optimal scheduling relaxation for a
population of non-preemptive loads against thermal plus renewable
generation, derives consumption and flexibility prices from the dual
certificate, verifies competitive equilibria, solves the exact binary
problem at desk scale, and runs the replication / market-mechanism
experiments including an EV-charging case study.
"""
from .model import (
    GeneratorModel,
    Instance,
    LoadType,
    TimeGrid,
    ValidationError,
    inflexible_disutility,
    quadratic_disutility,
    validate_instance,
)
from .planner import (
    DualCertificate,
    PriceSet,
    RelaxedSolution,
    activation_energy_price,
    activation_flexibility_price,
    check_kkt,
    complete_yz,
    derive_prices,
    solve_relaxation,
)
from .equilibrium import (
    Allocation,
    EquilibriumReport,
    consumer_best_response,
    generator_best_response,
    iso_best_response,
    verify_equilibrium,
)
from .milp import BinarySchedule, BnbStats, branch_and_bound, brute_force_schedule, evaluate_schedule
from .replication import (
    MechanismTranscript,
    ReplicatedSolution,
    audit_budget_balance,
    audit_individual_rationality,
    lln_slope,
    lln_study,
    run_mechanism,
    sample_starts,
    scale_solution,
)
from .ingest import (
    ChargingSession,
    ScenarioConfig,
    build_surge,
    parse_generation,
    parse_sessions,
    session_to_load,
)

__version__ = "0.1.0"
