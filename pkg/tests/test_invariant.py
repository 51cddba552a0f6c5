import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from bwshare.allocator import AlphaFairPolicy
from bwshare.distributions import Deterministic, Exponential, HyperExponential, UniformInterval
from bwshare.errors import EmptyCriticalSet, NotInP
from bwshare.fluid import FluidData
from bwshare.invariant import (
    critical_resources,
    is_in_P,
    is_invariant_state,
    lift_workload,
    make_invariant_state,
    workload_of,
    z_from_multipliers,
)
from bwshare.measure import AtomicMeasure, levy_distance
from bwshare.topology import linear_network, validate_topology

SINGLE = validate_topology([[1]], [1.0])


def single(rho, size=Exponential(1.0)):
    return FluidData(SINGLE, AlphaFairPolicy.uniform(1), [rho / size.mean], [size])


def linear(rho=(0.5, 0.5, 0.5), alpha=1.0, kappa=(1, 1, 1), sizes=None):
    sizes = sizes or [Exponential(1.0)] * 3
    nu = [r / s.mean for r, s in zip(rho, sizes)]
    return FluidData(linear_network(), AlphaFairPolicy(alpha, kappa), nu, sizes)


def F(data, z):
    a, k = data.policy.alpha, data.policy.kappa
    nu, mu = data.nu, data.mu
    return float(np.sum(nu * k * mu ** (a - 1) * (z / nu) ** (a + 1)) / (a + 1))


def oracle_lift(data, w):
    """Independent constrained minimization of F with a general-purpose solver."""
    crit = critical_resources(data).resources
    B = data.topology.incidence[crit] / data.mu
    cons = {"type": "ineq", "fun": lambda z: B @ z - w, "jac": lambda z: B}
    x0 = np.full(data.topology.num_routes, float(np.max(w)) * 2 + 1)
    res = minimize(lambda z: F(data, z), x0, method="SLSQP", bounds=[(0, None)] * x0.size,
                   constraints=[cons], options={"ftol": 1e-15, "maxiter": 1000})
    return res.x


def test_critical_resources_examples():
    assert len(critical_resources(single(0.5))) == 0 and critical_resources(single(0.5)).feasible
    assert critical_resources(single(1.0)).resources.tolist() == [0]
    assert critical_resources(linear()).resources.tolist() == [0, 1]
    assert not critical_resources(single(1.5)).feasible


def test_near_critical_warning(caplog):
    with caplog.at_level(logging.WARNING):
        crit = critical_resources(single(1.0 - 1e-7))
    assert len(crit) == 0 and crit.near_critical.tolist() == [0]
    assert "critical" in caplog.text


def test_is_in_P_examples():
    assert is_in_P(single(0.5), [0.0])[0]
    assert not is_in_P(single(0.5), [1.0])[0]
    assert is_in_P(single(1.0), [3.7])[0]


def test_lift_examples():
    data = single(1.0, Exponential(2.0))
    z, q = lift_workload(data, [2.0])
    assert z == pytest.approx([4.0], abs=1e-8)
    assert np.array_equal(lift_workload(data, [0.0])[0], [0.0])
    with pytest.raises(EmptyCriticalSet):
        lift_workload(single(0.5), [1.0])


def test_lift_linear_symmetric_against_oracle():
    data = linear()
    z, q = lift_workload(data, [1.0, 1.0])
    ref = oracle_lift(data, np.array([1.0, 1.0]))
    assert np.allclose(z, ref, atol=1e-6)
    assert np.allclose(z, [2 / 3, 1 / 3, 1 / 3], atol=1e-8)
    assert np.allclose(z_from_multipliers(data, q), z, atol=1e-8)


@given(
    st.floats(0.0, 3.0, allow_subnormal=False),
    st.floats(0.0, 3.0, allow_subnormal=False),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_lift_matches_oracle(w1, w2, alpha):
    data = linear(alpha=alpha, kappa=(1.0, 2.0, 0.5), sizes=[Exponential(1.0), Deterministic(0.5), Exponential(3.0)])
    w = np.array([w1, w2])
    z, q = lift_workload(data, w)
    assert np.all(workload_of(data, z) >= w - 1e-8)
    if w.any():
        ref = oracle_lift(data, w)
        assert F(data, z) <= F(data, ref) + 1e-7 * max(1.0, F(data, ref))
        assert is_in_P(data, z, 1e-6)[0]


def sample_P(rng):
    """Random critical instance plus a point of P built from random multipliers."""
    I = int(rng.integers(1, 6))
    J = int(rng.integers(1, 5))
    A = (rng.random((J, I)) < 0.5).astype(float)
    for i in range(I):
        if not A[:, i].any():
            A[rng.integers(J), i] = 1.0
    rho = rng.uniform(0.1, 1.0, I)
    C = A @ rho
    slack = rng.random(J) < 0.3
    C[slack] *= rng.uniform(1.1, 2.0, slack.sum())
    used = A.any(axis=1)
    C[~used] = 1.0
    if not (used & ~slack).any():
        j = int(np.flatnonzero(used)[0])
        C[j] = (A @ rho)[j]
    sizes = [Exponential(rng.uniform(0.5, 2)), Deterministic(rng.uniform(0.5, 2)),
             HyperExponential((0.3, 0.7), (1.0, 3.0)), UniformInterval(0.0, rng.uniform(0.5, 2))]
    sz = [sizes[int(rng.integers(4))] for _ in range(I)]
    nu = rho / np.array([s.mean for s in sz])
    alpha = float(rng.choice([0.5, 1.0, 2.0, rng.uniform(0.3, 3.0)]))
    data = FluidData(validate_topology(A, C), AlphaFairPolicy(alpha, rng.uniform(0.5, 2.0, I)), nu, sz)
    crit = critical_resources(data).resources
    q = rng.exponential(1.0, crit.size) * (rng.random(crit.size) < 0.8)
    return data, z_from_multipliers(data, q, crit)


def test_round_trip_on_P():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        data, z = sample_P(rng)
        assert is_in_P(data, z, 1e-6)[0]
        back, q = lift_workload(data, workload_of(data, z))
        worst = max(worst, float(np.max(np.abs(back - z))))
        assert np.allclose(z_from_multipliers(data, q), back, atol=1e-6)
    assert worst <= 1e-6


def test_no_critical_resources_means_P_is_zero():
    rng = np.random.default_rng(4)
    data = linear(rho=(0.2, 0.3, 0.4))
    assert len(critical_resources(data)) == 0
    for _ in range(100):
        assert not is_in_P(data, rng.uniform(0.01, 5.0, 3))[0]


def test_make_invariant_state_examples():
    zero = make_invariant_state(linear(), np.zeros(3))
    assert all(m.is_zero for m in zero.measures)
    uni = make_invariant_state(single(1.0, Deterministic(1.0)), [2.0], atoms=256)
    ref = UniformInterval(0.0, 1.0).discretize(256).scale(2.0)
    assert levy_distance(uni.measures[0], ref) <= 1e-12
    assert uni.measures[0].total_mass == pytest.approx(2.0, abs=1e-9)
    exp = make_invariant_state(single(1.0), [3.0], atoms=256)
    assert levy_distance(exp.measures[0], Exponential(1.0).discretize(256).scale(3.0)) <= 1e-12
    assert exp.multipliers is not None
    with pytest.raises(NotInP):
        make_invariant_state(single(0.5), [1.0])


def test_is_invariant_state_checks():
    data = single(1.0)
    good = make_invariant_state(data, [2.0]).measures
    assert is_invariant_state(data, good).ok
    bad = is_invariant_state(data, [AtomicMeasure.dirac(1.0)])
    assert not bad.ok and bad.in_P and bad.shape_distances[0] > bad.tol


def test_infeasible_load_rejects_everything():
    rng = np.random.default_rng(9)
    data = linear(rho=(0.6, 0.5, 0.3))
    assert not critical_resources(data).feasible
    assert not is_invariant_state(data, [AtomicMeasure.zero()] * 3).ok
    for _ in range(50):
        xi = [Exponential(1.0).discretize(32).scale(float(m)) for m in rng.uniform(0, 3, 3)]
        assert not is_invariant_state(data, xi).ok
