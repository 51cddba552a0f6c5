import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwshare.allocator import AlphaFairPolicy
from bwshare.distributions import Deterministic, Exponential, HyperExponential
from bwshare.errors import InvalidInput
from bwshare.fluid import FluidData, fluid_equation_residual, solve, workload_identity_residual
from bwshare.measure import AtomicMeasure
from bwshare.topology import linear_network, validate_topology

SINGLE = validate_topology([[1]], [1.0])


def single_route(nu, size=Exponential(1.0)):
    return FluidData(SINGLE, AlphaFairPolicy.uniform(1), [nu], [size])


def draining(dt, atoms):
    data = single_route(0.5)
    return solve(data, [Exponential(1.0).discretize(atoms)], 1.0, dt, atoms=atoms)


def invariants_hold(sol, tol_u=None):
    dt = sol.dt
    cnorm = float(np.abs(sol.data.topology.capacities).max())
    assert all(m.is_zero or m.locations.min() > 0 for ms in sol.measures for m in ms)
    assert np.all(np.diff(sol.u, axis=0) >= -(tol_u or 10 * dt * cnorm))
    # mass inflow bound
    bound = sol.z[0] + np.outer(sol.times, sol.data.nu) + dt * sol.data.nu
    assert np.all(sol.z <= bound + 1e-12)


def test_fluid_data_validation():
    with pytest.raises(InvalidInput):
        single_route(0.0)
    assert FluidData(SINGLE, AlphaFairPolicy.uniform(1), [0.0], [Exponential(1.0)], allow_zero_rate=True).rho[0] == 0
    assert single_route(0.5, HyperExponential((0.5, 0.5), (1, 2))).rho[0] == pytest.approx(0.375)
    with pytest.raises(InvalidInput):
        solve(single_route(0.5), [AtomicMeasure.zero()], 1.0, 0.3)


def test_draining_example():
    dt = 1e-2
    sol = draining(dt, 512)
    assert sol.w[-1, 0] == pytest.approx(0.5, abs=5 * dt)
    assert workload_identity_residual(sol) <= 5 * dt * (0.5 + 1.0)
    invariants_hold(sol)


def test_overloaded_example():
    dt = 1e-2
    sol = solve(single_route(2.0), [AtomicMeasure.zero()], 2.0, dt)
    assert np.max(np.abs(sol.w[:, 0] - sol.times)) <= 5 * dt
    assert sol.tau[-1, 0] == pytest.approx(2.0, abs=5 * dt)
    invariants_hold(sol)


def test_zero_solution_subcritical():
    dt = 1e-2
    data = FluidData(linear_network(), AlphaFairPolicy.uniform(3), [0.1, 0.2, 0.3], [Exponential(1.0)] * 3)
    sol = solve(data, [AtomicMeasure.zero()] * 3, 5.0, dt)
    assert np.all(sol.z.sum(axis=1) <= 2 * data.nu.max() * dt)
    assert np.allclose(sol.tau, np.outer(sol.times, data.rho), atol=1e-12)
    assert np.all(sol.w == 0)
    assert fluid_equation_residual(sol) == 0.0
    invariants_hold(sol)


def test_refinement_reduces_equation_residual():
    r1 = fluid_equation_residual(draining(0.02, 256))
    r2 = fluid_equation_residual(draining(0.01, 512))
    r3 = fluid_equation_residual(draining(0.005, 1024))
    assert r1 / r2 >= 1.5 and r2 / r3 >= 1.5


def test_csv_and_recording(tmp_path):
    sol = solve(single_route(0.5), [Deterministic(1.0).discretize()], 1.0, 0.01, record_every=10, record_times=[0.55])
    assert np.allclose(sol.times, np.sort(np.r_[np.arange(11) * 0.1, 0.55]))
    assert sol.measures_at(0.55)[0].total_mass > 0
    text = sol.to_csv(tmp_path / "fluid.csv")
    assert text.splitlines()[0] == "time,z_0,w_0,tau_0,u_0"
    assert (tmp_path / "fluid.csv").read_text() == text


@settings(max_examples=12)
@given(
    st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
    st.lists(st.floats(0.0, 2.0), min_size=3, max_size=3),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_linear_network_invariants(nu, z0, alpha):
    sizes = [Deterministic(0.5), HyperExponential((0.5, 0.5), (1, 2)), Exponential(2.0)]
    data = FluidData(linear_network(), AlphaFairPolicy.uniform(3, alpha), nu, sizes)
    zeta0 = [s.excess().discretize(64).scale(z) if z > 0 else AtomicMeasure.zero() for s, z in zip(sizes, z0)]
    sol = solve(data, zeta0, 2.0, 0.02, atoms=64)
    assert workload_identity_residual(sol) <= 1e-9
    invariants_hold(sol)
