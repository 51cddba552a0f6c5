"""Event-driven simulation of the flow-level bandwidth-sharing model.

Flows on route i share the route's allocation ``lam_i`` equally, where
``lam = Lambda(Z)`` is recomputed whenever the flow counts ``Z`` change.
Between events all rates are constant, so departure times are computed in
closed form and no time stepping is involved.

The index-r model keeps the arrival rate ``nu`` and the size laws fixed and
starts from ``floor(r * z0_i)`` flows; fluid scaling then compresses time and
mass by ``r``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocator import AlphaFairPolicy
from .distributions import Distribution
from .errors import InvalidScenario
from .measure import AtomicMeasure
from .topology import NetworkTopology

PURPOSES = ("interarrival", "size", "initial")
EVENT_KINDS = ("start", "arrival", "departure")
DEPART_RTOL = 1e-12
_BLOCK = 256
_CACHE_LIMIT = 200_000


def stream(seed: int, replication: int, route: int, purpose: str) -> np.random.Generator:
    """Named RNG stream: the master seed split by (replication, route, purpose)."""
    key = (int(replication), int(route), PURPOSES.index(purpose))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


class _Sampler:
    """Draws from ``dist`` in fixed-size blocks (block size does not affect values)."""

    def __init__(self, dist: Distribution, rng: np.random.Generator):
        self.dist, self.rng = dist, rng
        self.buf = np.empty(0)
        self.pos = 0

    def __call__(self) -> float:
        if self.pos == self.buf.size:
            self.buf = self.dist.sample(self.rng, _BLOCK)
            self.pos = 0
        x = self.buf[self.pos]
        self.pos += 1
        return float(x)


@dataclass
class TrafficModel:
    """Everything the simulator needs; the harness ``Scenario`` has the same fields.

    ``interarrival[i] = None`` switches arrivals off on route i.
    """

    topology: NetworkTopology
    policy: AlphaFairPolicy
    interarrival: Sequence[Distribution | None]
    sizes: Sequence[Distribution]
    initial_sizes: Sequence[Distribution]
    z0: np.ndarray


@dataclass
class FlowRecord:
    route: int
    flow_id: int
    arrival_time: float
    initial_size: float
    residual: float
    departure_time: float | None = None


@dataclass
class Snapshot:
    """State at a requested sample time."""

    time: float
    measures: list[AtomicMeasure]
    Z: np.ndarray
    W: np.ndarray
    T: np.ndarray
    U: np.ndarray
    S: np.ndarray
    load_count: np.ndarray
    load_sum: np.ndarray


@dataclass
class SimTrace:
    """Event table plus sample-time snapshots.

    Row ``k`` describes the state right after event ``k``. ``scale`` is 1 for
    a raw trace and ``r`` after :func:`fluid_scale`.
    """

    num_routes: int
    num_resources: int
    time: np.ndarray
    kind: np.ndarray
    route: np.ndarray
    flow_id: np.ndarray
    size: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    U: np.ndarray
    T: np.ndarray
    S: np.ndarray
    load_count: np.ndarray
    load_sum: np.ndarray
    w_initial: np.ndarray
    snapshots: list[Snapshot] = field(default_factory=list)
    scale: float = 1.0

    def __len__(self) -> int:
        return self.time.size

    def to_csv(self, path=None) -> str:
        I, J = self.num_routes, self.num_resources
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["time", "event", "route", "flow_id", "size"]
            + [f"z_{i}" for i in range(I)]
            + [f"w_{i}" for i in range(I)]
            + [f"lambda_{i}" for i in range(I)]
            + [f"u_{j}" for j in range(J)]
        )
        g = "%.17g".__mod__
        for k in range(len(self)):
            w.writerow(
                [g(self.time[k]), EVENT_KINDS[self.kind[k]], int(self.route[k]), int(self.flow_id[k]), g(self.size[k])]
                + [g(x) for x in self.Z[k]]
                + [g(x) for x in self.W[k]]
                + [g(x) for x in self.lam[k]]
                + [g(x) for x in self.U[k]]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


class SimState:
    """Mutable simulator state; one instance per replication."""

    def __init__(self, model, r: float = 1.0, seed: int = 0, replication: int = 0, *, keep_departed: bool = False):
        self.model = model
        self.topology: NetworkTopology = model.topology
        self.policy = model.policy
        self.r = float(r)
        self.seed = int(seed)
        self.replication = int(replication)
        I, J = self.topology.num_routes, self.topology.num_resources
        self.clock = 0.0
        self.res = [np.empty(0) for _ in range(I)]
        self.vsize = [np.empty(0) for _ in range(I)]
        self.fid = [np.empty(0, dtype=np.int64) for _ in range(I)]
        self.born = [np.empty(0) for _ in range(I)]
        self.next_id = np.zeros(I, dtype=np.int64)
        self.next_arrival = np.full(I, np.inf)
        self.T = np.zeros(I)
        self.U = np.zeros(J)
        self.S = np.zeros(I)
        self.arrivals = np.zeros(I, dtype=np.int64)
        self.load_sum = np.zeros(I)
        self.load_sizes: list[list[float]] = [[] for _ in range(I)]
        self.lam = np.zeros(I)
        self.keep_departed = keep_departed
        self.departed: list[FlowRecord] = []
        self._prices = None
        self._cache: dict[bytes, np.ndarray] = {}
        self._inter: list[_Sampler | None] = [None] * I
        self._size: list[_Sampler | None] = [None] * I

    # -- setup ------------------------------------------------------------
    def _add_flow(self, i: int, size: float, t: float) -> int:
        k = int(self.next_id[i])
        self.next_id[i] += 1
        self.res[i] = np.append(self.res[i], size)
        self.vsize[i] = np.append(self.vsize[i], size)
        self.fid[i] = np.append(self.fid[i], k)
        self.born[i] = np.append(self.born[i], t)
        return k

    @property
    def Z(self) -> np.ndarray:
        return np.array([a.size for a in self.res], dtype=float)

    @property
    def W(self) -> np.ndarray:
        return np.array([float(a.sum()) for a in self.res])

    def flows(self, route: int) -> list[FlowRecord]:
        return [
            FlowRecord(route, int(k), float(b), float(v), float(x))
            for k, b, v, x in zip(self.fid[route], self.born[route], self.vsize[route], self.res[route])
        ]

    def load_measure(self, route: int) -> AtomicMeasure:
        """L_i(t): one unit atom per document arrived on the route so far."""
        return AtomicMeasure(np.asarray(self.load_sizes[route]))

    # -- dynamics ---------------------------------------------------------
    def _allocate(self) -> None:
        Z = self.Z
        key = Z.tobytes()
        lam = self._cache.get(key)
        if lam is None:
            res = self.policy.allocate(self.topology, Z, warm_start=self._prices)
            self._prices = res.normalized_prices
            lam = res.lam
            if len(self._cache) >= _CACHE_LIMIT:
                self._cache.clear()
            self._cache[key] = lam
        self.lam = lam

    def _rates(self) -> np.ndarray:
        Z = self.Z
        return np.divide(self.lam, Z, out=np.zeros_like(self.lam), where=Z > 0)

    def _advance(self, t: float) -> None:
        dt = t - self.clock
        if dt > 0:
            rate = self._rates()
            for i, x in enumerate(self.res):
                if x.size:
                    self.res[i] = x - rate[i] * dt
            self.S += rate * dt
            self.T += self.lam * dt
            A, C = self.topology.incidence, self.topology.capacities
            self.U += np.maximum(C - A @ self.lam, 0.0) * dt
        self.clock = t

    def _next_departure(self) -> tuple[float, int]:
        best, route = np.inf, -1
        for i, x in enumerate(self.res):
            if x.size and self.lam[i] > 0:
                t = self.clock + float(x.min()) * x.size / self.lam[i]
                if t < best:
                    best, route = t, i
        return best, route

    def _remove(self, i: int, k: int) -> tuple[int, float]:
        fid, v = int(self.fid[i][k]), float(self.vsize[i][k])
        if self.keep_departed:
            self.departed.append(FlowRecord(i, fid, float(self.born[i][k]), v, 0.0, self.clock))
        for name in ("res", "vsize", "fid", "born"):
            arr = getattr(self, name)
            arr[i] = np.delete(arr[i], k)
        return fid, v


def init_sim(model, r: float = 1.0, seed: int = 0, replication: int = 0, *, keep_departed: bool = False) -> SimState:
    """Index-r initial state: floor(r * z0_i) initial flows per route, first arrivals scheduled."""
    if not r >= 1:
        raise InvalidScenario(f"scaling parameter r must be >= 1, got {r}")
    I = model.topology.num_routes
    z0 = np.asarray(model.z0, dtype=float)
    if z0.shape != (I,) or np.any(z0 < 0):
        raise InvalidScenario("z0 must be a nonnegative vector with one entry per route")
    for name in ("interarrival", "sizes", "initial_sizes"):
        if len(getattr(model, name)) != I:
            raise InvalidScenario(f"{name} must have one entry per route")
    st = SimState(model, r, seed, replication, keep_departed=keep_departed)
    for i in range(I):
        n0 = int(np.floor(r * z0[i] + 1e-9))
        if n0:
            sizes = model.initial_sizes[i].sample(stream(seed, replication, i, "initial"), n0)
            st.res[i] = sizes.copy()
            st.vsize[i] = sizes.copy()
            st.fid[i] = np.arange(n0, dtype=np.int64)
            st.born[i] = np.zeros(n0)
            st.next_id[i] = n0
        if model.interarrival[i] is not None:
            st._inter[i] = _Sampler(model.interarrival[i], stream(seed, replication, i, "interarrival"))
            st._size[i] = _Sampler(model.sizes[i], stream(seed, replication, i, "size"))
            st.next_arrival[i] = st._inter[i]()
    st.w_initial = st.W
    st._allocate()
    return st


def state_from_flows(topology: NetworkTopology, policy: AlphaFairPolicy, sizes: Sequence[Sequence[float]]) -> SimState:
    """Closed system (no arrivals) holding the given initial residual sizes."""
    I = topology.num_routes
    if len(sizes) != I:
        raise InvalidScenario("need one size list per route")
    dummy = [None] * I
    model = TrafficModel(topology, policy, dummy, dummy, dummy, np.zeros(I))
    st = SimState(model)
    for i, vs in enumerate(sizes):
        vs = np.asarray(vs, dtype=float)
        if np.any(vs <= 0):
            raise InvalidScenario("flow sizes must be > 0")
        st.res[i] = vs.copy()
        st.vsize[i] = vs.copy()
        st.fid[i] = np.arange(vs.size, dtype=np.int64)
        st.born[i] = np.zeros(vs.size)
        st.next_id[i] = vs.size
    st.w_initial = st.W
    st._allocate()
    return st


def observe(state: SimState) -> list[AtomicMeasure]:
    """Per-route measure with one unit atom at each positive residual."""
    return [AtomicMeasure(x[x > 0]) for x in state.res]


def _snapshot(st: SimState) -> Snapshot:
    return Snapshot(
        st.clock, observe(st), st.Z, st.W, st.T.copy(), st.U.copy(), st.S.copy(),
        st.arrivals.astype(float), st.load_sum.copy(),
    )


def run_until(state: SimState, horizon: float, sample_times: Sequence[float] = (), *, record_events: bool = True) -> SimTrace:
    """Advance ``state`` to ``horizon``; snapshot at each of ``sample_times``.

    Snapshots at a time t include all events occurring at t. Events at equal
    times are processed departures first, then by route, then by flow id.
    """
    st = state
    if horizon < st.clock:
        raise InvalidScenario("horizon is before the current clock")
    I, J = st.topology.num_routes, st.topology.num_resources
    rows: list[tuple] = []

    def record(kind: int, route: int, fid: int, size: float) -> None:
        if record_events:
            rows.append((st.clock, kind, route, fid, size, st.Z, st.W, st.lam.copy(), st.U.copy(),
                         st.T.copy(), st.S.copy(), float(st.arrivals.sum()), st.arrivals.copy(), st.load_sum.copy()))

    samples = sorted(float(t) for t in sample_times if st.clock <= t <= horizon)
    snaps: list[Snapshot] = []
    si = 0
    record(0, -1, -1, 0.0)
    while True:
        t_dep, r_dep = st._next_departure()
        r_arr = int(np.argmin(st.next_arrival))
        t_arr = float(st.next_arrival[r_arr])
        t_next = min(t_dep, t_arr)
        while si < len(samples) and samples[si] < t_next:
            st._advance(samples[si])
            snaps.append(_snapshot(st))
            si += 1
        if t_next > horizon:
            break
        st._advance(t_next)
        if t_dep <= t_arr:
            # the flow that triggered the event has residual exactly 0 by construction
            st.res[r_dep][int(np.argmin(st.res[r_dep]))] = 0.0
            for i in range(I):
                while st.res[i].size:
                    gone = st.res[i] <= DEPART_RTOL * np.maximum(1.0, st.vsize[i])
                    if not gone.any():
                        break
                    k = int(np.flatnonzero(gone)[np.argmin(st.fid[i][gone])])
                    fid, v = st._remove(i, k)
                    st._allocate()
                    record(2, i, fid, v)
        else:
            i = r_arr
            v = st._size[i]()
            fid = st._add_flow(i, v, st.clock)
            st.arrivals[i] += 1
            st.load_sum[i] += v
            st.load_sizes[i].append(v)
            st.next_arrival[i] = st.clock + st._inter[i]()
            st._allocate()
            record(1, i, fid, v)
    st._advance(horizon)
    while si < len(samples):
        snaps.append(_snapshot(st))
        si += 1
    return _build_trace(st, rows, snaps)


def _build_trace(st: SimState, rows, snaps) -> SimTrace:
    I, J = st.topology.num_routes, st.topology.num_resources
    n = len(rows)

    def col(k, width=None, dtype=float):
        if width is None:
            return np.array([row[k] for row in rows], dtype=dtype)
        return np.array([row[k] for row in rows], dtype=dtype).reshape(n, width)

    return SimTrace(
        num_routes=I,
        num_resources=J,
        time=col(0),
        kind=col(1, dtype=np.int64),
        route=col(2, dtype=np.int64),
        flow_id=col(3, dtype=np.int64),
        size=col(4),
        Z=col(5, I),
        W=col(6, I),
        lam=col(7, I),
        U=col(8, J),
        T=col(9, I),
        S=col(10, I),
        load_count=col(12, I),
        load_sum=col(13, I),
        w_initial=np.asarray(st.w_initial, dtype=float).copy(),
        snapshots=snaps,
    )


def fluid_scale(trace: SimTrace, r: float) -> SimTrace:
    """Compress time and mass by ``r``; atom locations and per-flow service are unchanged."""
    if r == 1:
        return trace
    snaps = [
        Snapshot(s.time / r, [m.scale(1.0 / r) for m in s.measures], s.Z / r, s.W / r, s.T / r, s.U / r, s.S.copy(),
                 s.load_count / r, s.load_sum / r)
        for s in trace.snapshots
    ]
    return SimTrace(
        trace.num_routes, trace.num_resources, trace.time / r, trace.kind.copy(), trace.route.copy(),
        trace.flow_id.copy(), trace.size.copy(), trace.Z / r, trace.W / r, trace.lam.copy(), trace.U / r,
        trace.T / r, trace.S.copy(), trace.load_count / r, trace.load_sum / r, trace.w_initial / r, snaps,
        trace.scale * r,
    )


def workload_balance_check(trace: SimTrace) -> float:
    """max |W(t) - W(0) - <chi, L(t)> + T(t)| over recorded events and routes."""
    if len(trace) == 0:
        return 0.0
    resid = trace.W - trace.w_initial - trace.load_sum + trace.T
    return float(np.max(np.abs(resid)))


def smooth_indicator(theta: float):
    """f(x) = 1 - (1 + theta x) exp(-theta x) for x > 0, extended by 0 on x <= 0."""

    def f(x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return 1.0 - (1.0 + theta * x) * np.exp(-theta * x)

    return f


DEFAULT_BATTERY = tuple(smooth_indicator(th) for th in (0.5, 1.0, 2.0, 4.0, 16.0))


def prelimit_dynamic_check(trace: SimTrace, battery=DEFAULT_BATTERY, intervals=None) -> float:
    """Check <f, Z_i(t)> = <f(. - S_i(s,t)), Z_i(s)> + sum over arrivals in (s, t] of f(v - S_i(u, t)) / scale.

    ``intervals`` are index pairs into ``trace.snapshots``; by default every
    consecutive pair plus (first, k) for each later k. The test functions must
    vanish at 0 (departed flows contribute nothing).
    """
    snaps = trace.snapshots
    if len(snaps) < 2:
        return 0.0
    if intervals is None:
        intervals = [(k, k + 1) for k in range(len(snaps) - 1)] + [(0, k) for k in range(2, len(snaps))]
    arrivals = trace.kind == 1
    worst = 0.0
    mass = 1.0 / trace.scale
    for a, b in intervals:
        s, t = snaps[a], snaps[b]
        sel = arrivals & (trace.time > s.time) & (trace.time <= t.time)
        routes, sizes, svc = trace.route[sel], trace.size[sel], trace.S[sel]
        for i in range(trace.num_routes):
            shift = t.S[i] - s.S[i]
            mine = routes == i
            late = sizes[mine] - (t.S[i] - svc[mine, i])
            src = s.measures[i]
            for f in battery:
                lhs = float(t.measures[i].masses @ f(t.measures[i].locations)) if len(t.measures[i]) else 0.0
                rhs = float(src.masses @ f(src.locations - shift)) if len(src) else 0.0
                rhs += mass * float(np.sum(f(late)))
                worst = max(worst, abs(lhs - rhs))
    return worst
