"""Flow-level bandwidth-sharing networks: simulation, fluid model and invariant states."""

from .allocator import AlphaFairPolicy, AllocationResult, allocate, grid_oracle, objective_value
from .distributions import (
    Deterministic,
    Distribution,
    EmpiricalAtoms,
    Exponential,
    HyperExponential,
    UniformInterval,
    dist_stats,
    distribution_from_dict,
    excess_lifetime,
)
from .fluid import FluidData, FluidSolution, fluid_equation_residual, solve, workload_identity_residual
from .harness import Scenario, parse_scenario, run_convergence, run_lln, run_stationarity
from .invariant import (
    critical_resources,
    is_in_P,
    is_invariant_state,
    lift_workload,
    make_invariant_state,
)
from .measure import AtomicMeasure, integrate, levy_distance, prohorov_exact, shift_left, vector_distance
from .simulator import init_sim, observe, run_until
from .topology import NetworkTopology, linear_network, resource_load, validate_topology

__all__ = [name for name in dir() if not name.startswith("_")]
