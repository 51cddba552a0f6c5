from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwshare.allocator import AlphaFairPolicy, allocate
from bwshare.errors import InvalidScenario
from bwshare.harness import parse_scenario
from bwshare.simulator import (
    DEFAULT_BATTERY,
    fluid_scale,
    init_sim,
    observe,
    prelimit_dynamic_check,
    run_until,
    state_from_flows,
    stream,
    workload_balance_check,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def departures(trace):
    sel = trace.kind == 2
    return trace.time[sel], trace.route[sel], trace.flow_id[sel]


def relative_balance(trace):
    return workload_balance_check(trace) / max(1.0, float(np.abs(trace.W).max()), float(trace.load_sum.max()))


def count_identity_gap(trace):
    """Z(t) - Z(0) - arrivals(t) + departures(t) per event row; zero in exact arithmetic."""
    I = trace.num_routes
    dep = np.zeros((len(trace), I))
    for i in range(I):
        dep[:, i] = np.cumsum((trace.kind == 2) & (trace.route == i))
    return np.abs(trace.Z - trace.Z[0] - trace.load_count + dep).max()


def euler_departures(sizes, rate_of, dt):
    """Crude time-stepping oracle: shrink every residual by its rate times dt."""
    res = [list(v) for v in sizes]
    t, out = 0.0, []
    while any(res):
        z = np.array([len(v) for v in res], dtype=float)
        lam = rate_of(z)
        t += dt
        for i, v in enumerate(res):
            if v:
                v[:] = [x - lam[i] / len(v) * dt for x in v]
                out += [t] * sum(x <= 1e-12 for x in v)
                v[:] = [x for x in v if x > 1e-12]
    return out


def test_processor_sharing_two_flows(single):
    st_ = state_from_flows(single, AlphaFairPolicy.uniform(1), [[2.0, 4.0]])
    tr = run_until(st_, 10.0)
    t, _, fid = departures(tr)
    assert t.tolist() == [4.0, 6.0]
    assert fid.tolist() == [0, 1]
    oracle = euler_departures([[2.0, 4.0]], lambda z: np.ones(1), 1e-3)
    assert np.allclose(oracle, [4.0, 6.0], atol=5e-3)


def test_three_route_simultaneous_departure(linear, pf3):
    st_ = state_from_flows(linear, pf3, [[1 / 3], [2 / 3], [2 / 3]])
    tr = run_until(st_, 5.0)
    t, routes, _ = departures(tr)
    assert len(t) == 3 and np.all(np.abs(t - 1.0) <= 1e-9)
    assert sorted(routes.tolist()) == [0, 1, 2]
    assert np.all(tr.Z[-1] == 0)


def test_mixed_departures_match_euler(linear, pf3):
    sizes = [[0.3, 0.9], [0.5], [0.2, 0.4, 1.1]]
    tr = run_until(state_from_flows(linear, pf3, sizes), 20.0)
    t, _, _ = departures(tr)
    oracle = euler_departures(sizes, lambda z: allocate(linear, pf3, z).lam, 1e-4)
    assert np.allclose(np.sort(t), np.sort(oracle), atol=2e-3)


def test_observe_and_flows(single):
    st_ = state_from_flows(single, AlphaFairPolicy.uniform(1), [[2.0, 4.0]])
    assert observe(st_)[0].total_mass == 2
    run_until(st_, 1.0)
    assert np.allclose(observe(st_)[0].locations, [1.5, 3.5])
    assert [f.residual for f in st_.flows(0)] == pytest.approx([1.5, 3.5])


def test_invalid_inputs(single):
    sc = parse_scenario(SCENARIOS / "single_route_hyperexp.json")
    with pytest.raises(InvalidScenario):
        init_sim(sc, 0.5, 0)
    with pytest.raises(InvalidScenario):
        state_from_flows(single, AlphaFairPolicy.uniform(1), [[0.0]])
    st_ = init_sim(sc, 1, 0)
    run_until(st_, 1.0)
    with pytest.raises(InvalidScenario):
        run_until(st_, 0.5)


def test_streams_are_independent_and_reproducible():
    a = stream(1, 0, 0, "size").random(5)
    assert np.array_equal(a, stream(1, 0, 0, "size").random(5))
    assert not np.array_equal(a, stream(1, 0, 0, "interarrival").random(5))
    assert not np.array_equal(a, stream(1, 1, 0, "size").random(5))
    assert not np.array_equal(a, stream(1, 0, 1, "size").random(5))


@pytest.fixture(scope="module")
def linear_trace():
    sc = parse_scenario(SCENARIOS / "linear_mixed.json")
    st_ = init_sim(sc, 20, seed=3)
    return run_until(st_, 20 * 3.0, sample_times=np.linspace(0, 60, 13))


def test_ledger_identities(linear_trace):
    tr = linear_trace
    assert relative_balance(tr) <= 1e-9
    assert count_identity_gap(tr) == 0
    assert np.all(np.diff(tr.U, axis=0) >= 0)
    # idleness equals capacity times time minus delivered service
    C, A = np.ones(2), np.array([[1, 1, 0], [1, 0, 1]])
    assert np.max(np.abs(tr.U - (np.outer(tr.time, C) - tr.T @ A.T))) <= 1e-9 * tr.time[-1]
    assert np.all(tr.lam @ A.T <= 1 + 1e-9)
    assert prelimit_dynamic_check(tr) <= 1e-9


def test_fluid_scaling_preserves_identities(linear_trace):
    sc = fluid_scale(linear_trace, 20)
    assert sc.scale == 20 and sc.time[-1] <= 3.0
    assert relative_balance(sc) <= 1e-9
    assert prelimit_dynamic_check(sc) <= 1e-9
    assert sc.snapshots[0].measures[0].total_mass == pytest.approx(1.0)


def test_trace_is_reproducible(tmp_path):
    sc = parse_scenario(SCENARIOS / "linear_mixed.json")
    paths = []
    for k in range(2):
        tr = run_until(init_sim(sc, 10, seed=5), 15.0)
        paths.append(tmp_path / f"run{k}.csv")
        tr.to_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    header = paths[0].read_text().splitlines()[0].split(",")
    assert header[:5] == ["time", "event", "route", "flow_id", "size"]
    other = run_until(init_sim(sc, 10, seed=6), 15.0).to_csv()
    assert other != paths[0].read_text()


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.sampled_from(["single_route_hyperexp", "linear_mixed", "lln_deterministic"]))
def test_identities_random_seeds(seed, name):
    sc = parse_scenario(SCENARIOS / f"{name}.json")
    tr = run_until(init_sim(sc, 5, seed=seed), 10.0, sample_times=[0, 2.5, 5, 7.5, 10])
    assert relative_balance(tr) <= 1e-9
    assert count_identity_gap(tr) == 0
    assert np.all(np.diff(tr.U, axis=0) >= 0)
    assert prelimit_dynamic_check(tr, DEFAULT_BATTERY) <= 1e-9
    assert np.all(np.diff(tr.time) >= 0)


def test_balance_check_negative_control(linear_trace):
    import dataclasses

    broken = dataclasses.replace(linear_trace, T=linear_trace.T + 1.0)
    assert workload_balance_check(broken) >= 1 - 1e-9


def test_same_seed_same_initial_state():
    sc = parse_scenario(SCENARIOS / "linear_mixed.json")
    a, b = init_sim(sc, 100, 42), init_sim(sc, 100, 42)
    assert all(np.array_equal(x, y) for x, y in zip(a.res, b.res))
    assert np.array_equal(a.next_arrival, b.next_arrival)
    assert a.Z.tolist() == [100, 100, 100]
