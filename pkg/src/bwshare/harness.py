"""Scenario files and the convergence / LLN / stationarity experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .allocator import AlphaFairPolicy
from .distributions import DEFAULT_ATOMS, Distribution, distribution_from_dict
from .errors import InvalidInput, InvalidScenario, NotInP, SchemaError, SemanticError, TopologyError
from .fluid import FluidData, solve
from .invariant import is_in_P, make_invariant_state
from .measure import AtomicMeasure, vector_distance
from .simulator import _Sampler, fluid_scale, init_sim, run_until, stream
from .topology import NetworkTopology, validate_topology

log = logging.getLogger(__name__)

SEED_ENV = "BWSHARE_SEED"
MONOTONE_SLACK = 0.10

_DIST = {
    "type": "object",
    "required": ["type"],
    "properties": {"type": {"enum": ["exponential", "deterministic", "uniform", "hyperexponential", "empirical", "excess"]}},
}
_NUMS = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["topology", "traffic"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "required": ["incidence", "capacities"],
            "properties": {
                "incidence": {"type": "array", "items": _NUMS, "minItems": 1},
                "capacities": _NUMS,
                "route_labels": {"type": "array", "items": {"type": "string"}},
                "resource_labels": {"type": "array", "items": {"type": "string"}},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha"],
            "properties": {"alpha": {"type": "number"}, "kappa": _NUMS},
        },
        "traffic": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["size"],
                "properties": {"interarrival": _DIST, "rate": {"type": "number"}, "size": _DIST},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z0": {"type": "array", "items": {"type": "number"}},
                "size_rule": {"enum": ["excess", "same", "explicit"]},
                "sizes": {"type": "array", "items": _DIST},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r_list": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "replications": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number"},
                "dt": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
                "sample_times": {"type": "array", "items": {"type": "number"}},
                "atoms": {"type": "integer", "minimum": 1},
                "threshold": {"type": "number"},
                "lln_threshold": {"type": "number"},
                "stationarity_tol": {"type": "number"},
                "record_every": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass
class ExperimentConfig:
    r_list: tuple[float, ...] = (10.0, 100.0, 1000.0)
    replications: int = 20
    horizon: float = 2.0
    dt: float = 1e-3
    seed: int = 0
    sample_times: tuple[float, ...] = ()
    atoms: int = DEFAULT_ATOMS
    threshold: float = math.inf
    lln_threshold: float = math.inf
    stationarity_tol: float = 0.02
    record_every: int = 100


@dataclass
class Scenario:
    """Validated scenario. Field names match what the simulator reads."""

    name: str
    topology: NetworkTopology
    policy: AlphaFairPolicy
    interarrival: list[Distribution | None]
    sizes: list[Distribution]
    nu: np.ndarray
    z0: np.ndarray
    initial_rule: str
    initial_sizes: list[Distribution]
    experiment: ExperimentConfig
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def num_routes(self) -> int:
        return self.topology.num_routes

    @property
    def mu(self) -> np.ndarray:
        return np.array([1.0 / d.mean for d in self.sizes])

    @property
    def rho(self) -> np.ndarray:
        return self.nu / self.mu

    @property
    def can_simulate(self) -> bool:
        return all(d is not None for d in self.interarrival)

    def fluid_data(self) -> FluidData:
        return FluidData(self.topology, self.policy, self.nu, self.sizes)

    def initial_fluid_state(self, atoms: int | None = None) -> list[AtomicMeasure]:
        """Limit of the scaled initial states: z0_i times the initial size law."""
        n = atoms or self.experiment.atoms
        return [
            self.initial_sizes[i].discretize(n).scale(self.z0[i]) if self.z0[i] > 0 else AtomicMeasure.zero()
            for i in range(self.num_routes)
        ]

    def with_seed(self, seed: int | None) -> "Scenario":
        if seed is None:
            return self
        exp = ExperimentConfig(**{**self.experiment.__dict__, "seed": int(seed)})
        return Scenario(**{**self.__dict__, "experiment": exp})


def _dist(d: dict, where: str) -> Distribution:
    try:
        return distribution_from_dict(d)
    except (InvalidInput, TypeError, ValueError) as exc:
        raise SemanticError(f"{where}: {exc}") from None


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(exc.message, path) from None

    t = raw["topology"]
    try:
        top = validate_topology(t["incidence"], t["capacities"], t.get("route_labels", ()), t.get("resource_labels", ()))
    except TopologyError as exc:
        raise SemanticError(f"topology: {exc}") from None
    I = top.num_routes

    pol_raw = raw.get("policy", {"alpha": 1.0})
    kappa = pol_raw.get("kappa")
    if kappa is None:
        log.info("policy.kappa not given; using all-ones weights")
        kappa = [1.0] * I
    if len(kappa) != I:
        raise SemanticError(f"policy.kappa has {len(kappa)} entries for {I} routes")
    try:
        policy = AlphaFairPolicy(pol_raw["alpha"], np.asarray(kappa, dtype=float))
    except InvalidInput as exc:
        raise SemanticError(f"policy: {exc}") from None

    traffic = raw["traffic"]
    if len(traffic) != I:
        raise SemanticError(f"traffic has {len(traffic)} entries for {I} routes")
    inter, sizes, nu = [], [], []
    for i, tr in enumerate(traffic):
        sizes.append(_dist(tr["size"], f"traffic/{i}/size"))
        if "interarrival" in tr:
            d = _dist(tr["interarrival"], f"traffic/{i}/interarrival")
            inter.append(d)
            rate = 1.0 / d.mean
            if "rate" in tr and not math.isclose(tr["rate"], rate, rel_tol=1e-12):
                raise SemanticError(f"traffic/{i}: rate {tr['rate']} disagrees with 1/mean(interarrival) = {rate}")
        elif "rate" in tr:
            inter.append(None)
            rate = float(tr["rate"])
        else:
            raise SemanticError(f"traffic/{i}: need 'interarrival' or 'rate'")
        if not (math.isfinite(rate) and rate > 0):
            raise SemanticError(f"traffic/{i}: arrival rate must be > 0, got {rate}")
        nu.append(rate)

    init = raw.get("initial", {})
    z0 = np.asarray(init.get("z0", [0.0] * I), dtype=float)
    if z0.shape != (I,) or np.any(z0 < 0) or not np.all(np.isfinite(z0)):
        raise SemanticError(f"initial/z0 must list {I} nonnegative numbers")
    rule = init.get("size_rule", "excess")
    if rule == "excess":
        init_sizes = [d.excess() for d in sizes]
    elif rule == "same":
        init_sizes = list(sizes)
    else:
        given = init.get("sizes")
        if given is None or len(given) != I:
            raise SemanticError("initial/sizes must give one distribution per route for size_rule 'explicit'")
        init_sizes = [_dist(d, f"initial/sizes/{i}") for i, d in enumerate(given)]

    e = raw.get("experiment", {})
    exp = ExperimentConfig(**{k: v for k, v in e.items() if k not in ("r_list", "sample_times")})
    exp.r_list = tuple(float(r) for r in e.get("r_list", ExperimentConfig.r_list))
    if any(b <= a for a, b in zip(exp.r_list, exp.r_list[1:])):
        raise SemanticError(f"experiment/r_list must be strictly increasing, got {list(exp.r_list)}")
    if any(r < 1 for r in exp.r_list):
        raise SemanticError("experiment/r_list entries must be >= 1")
    if not (exp.horizon > 0 and exp.dt > 0):
        raise SemanticError("experiment horizon and dt must be > 0")
    if abs(exp.horizon / exp.dt - round(exp.horizon / exp.dt)) > 1e-6:
        raise SemanticError("experiment/horizon must be a multiple of dt")
    samples = e.get("sample_times")
    if samples is None:
        samples = [exp.horizon * k / 10 for k in range(11)]
    for s in samples:
        if not 0 <= s <= exp.horizon + 1e-12:
            raise SemanticError(f"sample time {s} outside [0, horizon]")
        if abs(s / exp.dt - round(s / exp.dt)) > 1e-6:
            raise SemanticError(f"sample time {s} is not on the dt grid")
    exp.sample_times = tuple(sorted(float(s) for s in samples))

    return Scenario(
        name=raw.get("name", "scenario"),
        topology=top,
        policy=policy,
        interarrival=inter,
        sizes=sizes,
        nu=np.asarray(nu),
        z0=z0,
        initial_rule=rule,
        initial_sizes=init_sizes,
        experiment=exp,
        raw=raw,
    )


def parse_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    return scenario_from_dict(raw)


def resolve_seed(cli_seed: int | None, scenario: Scenario) -> int:
    """CLI value first, then the environment, then the scenario file."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env)
    return scenario.experiment.seed


# -- reports ---------------------------------------------------------------


def _monotone(values: Sequence[float], slack: float = MONOTONE_SLACK) -> bool:
    return all(b <= a * (1.0 + slack) for a, b in zip(values, values[1:]))


@dataclass
class ConvergenceReport:
    """Raw distances ``distances[r_index, replication, time_index]`` and the verdicts derived from them."""

    scenario: str
    r_list: list[float]
    replications: int
    sample_times: list[float]
    distances: np.ndarray
    threshold: float
    trajectory: dict = field(default_factory=dict)

    @property
    def sup_distances(self) -> np.ndarray:
        if self.distances.size == 0:
            return np.zeros(self.distances.shape[:2])
        return self.distances.max(axis=2)

    @property
    def median_sup(self) -> list[float]:
        return [float(np.median(row)) for row in self.sup_distances]

    @property
    def max_sup(self) -> list[float]:
        return [float(np.max(row)) for row in self.sup_distances]

    @property
    def monotone(self) -> bool:
        return _monotone(self.median_sup)

    @property
    def halved(self) -> bool:
        d = self.median_sup
        return len(d) > 1 and d[-1] < d[0] / 2

    @property
    def within_threshold(self) -> bool:
        d = self.median_sup
        return bool(d) and d[-1] <= self.threshold

    @property
    def passed(self) -> bool:
        return self.monotone and self.within_threshold

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "r_list": self.r_list,
            "replications": self.replications,
            "sample_times": self.sample_times,
            "median_sup_distance": self.median_sup,
            "max_sup_distance": self.max_sup,
            "threshold": self.threshold,
            "monotone": self.monotone,
            "halved": self.halved,
            "within_threshold": self.within_threshold,
            "verdict": "PASS" if self.passed else "FAIL",
            "distances": self.distances.tolist(),
            "note": None if self.passed else (
                "a large distance may reflect a different fluid model solution: uniqueness is not guaranteed"
            ),
        }


def run_convergence(
    scenario: Scenario,
    *,
    seed: int | None = None,
    r_list: Sequence[float] | None = None,
    replications: int | None = None,
    metric: str = "levy",
) -> ConvergenceReport:
    """Distance between fluid-scaled simulations and the fluid solution at the sample times."""
    if not scenario.can_simulate:
        raise InvalidScenario("convergence runs need an interarrival law on every route")
    exp = scenario.experiment
    seed = exp.seed if seed is None else int(seed)
    r_list = list(exp.r_list if r_list is None else r_list)
    reps = exp.replications if replications is None else int(replications)
    times = list(exp.sample_times)
    sol = solve(
        scenario.fluid_data(), scenario.initial_fluid_state(), exp.horizon, exp.dt,
        atoms=exp.atoms, record_every=max(1, int(round(exp.horizon / exp.dt))), record_times=times,
    )
    fluid_at = [sol.measures_at(t) for t in times]
    dist = np.zeros((len(r_list), reps, len(times)))
    sim_z = None
    for a, r in enumerate(r_list):
        for rep in range(reps):
            st = init_sim(scenario, r, seed, rep)
            tr = fluid_scale(run_until(st, r * exp.horizon, [r * t for t in times], record_events=False), r)
            for k, snap in enumerate(tr.snapshots):
                dist[a, rep, k] = vector_distance(snap.measures, fluid_at[k], metric)
            if a == len(r_list) - 1 and rep == 0:
                sim_z = np.array([s.Z for s in tr.snapshots])
    trajectory = {}
    if sim_z is not None:
        idx = [sol.index_of(t) for t in times]
        trajectory = {"time": times, "fluid_z": sol.z[idx].tolist(), "sim_z": sim_z.tolist(), "r": r_list[-1]}
    return ConvergenceReport(scenario.name, r_list, reps, times, dist, exp.threshold, trajectory)


@dataclass
class LLNReport:
    """Per r and replication: sup over sample times of the count and load discrepancies."""

    scenario: str
    r_list: list[float]
    sample_times: list[float]
    count_discrepancy: np.ndarray  # (r, replication)
    load_discrepancy: np.ndarray
    threshold: float

    @property
    def discrepancy(self) -> list[float]:
        both = np.maximum(self.count_discrepancy, self.load_discrepancy)
        return [float(np.median(row)) for row in both]

    @property
    def decreasing(self) -> bool:
        d = self.discrepancy
        return _monotone(d) and (len(d) < 2 or d[0] == 0 or d[-1] < d[0])

    @property
    def passed(self) -> bool:
        d = self.discrepancy
        return self.decreasing and bool(d) and d[-1] <= self.threshold

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "r_list": self.r_list,
            "sample_times": self.sample_times,
            "median_discrepancy": self.discrepancy,
            "count_discrepancy": self.count_discrepancy.tolist(),
            "load_discrepancy": self.load_discrepancy.tolist(),
            "threshold": self.threshold,
            "decreasing": self.decreasing,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def scaled_load(scenario: Scenario, r: float, seed: int, replication: int, times: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """(<1, L^r(t)>, <chi, L^r(t)>) fluid-scaled, at each sample time (rows) and route (columns).

    Uses the simulator's interarrival and size streams, so the values agree
    with the load process of a full simulation.
    """
    I = scenario.num_routes
    counts = np.zeros((len(times), I))
    loads = np.zeros((len(times), I))
    for i in range(I):
        nxt = _Sampler(scenario.interarrival[i], stream(seed, replication, i, "interarrival"))
        size = _Sampler(scenario.sizes[i], stream(seed, replication, i, "size"))
        t, n, total = nxt(), 0, 0.0
        for k, s in enumerate(times):
            while t <= r * s:
                n += 1
                total += size()
                t += nxt()
            counts[k, i], loads[k, i] = n / r, total / r
    return counts, loads


def run_lln(scenario: Scenario, *, seed: int | None = None, r_list: Sequence[float] | None = None,
            replications: int | None = None) -> LLNReport:
    if not scenario.can_simulate:
        raise InvalidScenario("LLN runs need an interarrival law on every route")
    exp = scenario.experiment
    seed = exp.seed if seed is None else int(seed)
    r_list = list(exp.r_list if r_list is None else r_list)
    reps = exp.replications if replications is None else int(replications)
    times = np.asarray(exp.sample_times)
    cnt = np.zeros((len(r_list), reps))
    load = np.zeros((len(r_list), reps))
    for a, r in enumerate(r_list):
        for rep in range(reps):
            c, l = scaled_load(scenario, r, seed, rep, times)
            cnt[a, rep] = np.max(np.abs(c - np.outer(times, scenario.nu)))
            load[a, rep] = np.max(np.abs(l - np.outer(times, scenario.rho)))
    return LLNReport(scenario.name, r_list, times.tolist(), cnt, load, exp.lln_threshold)


@dataclass
class StationarityReport:
    scenario: str
    times: list[float]
    distances: list[float]
    tol: float
    z: list[float]

    @property
    def sup_distance(self) -> float:
        return max(self.distances, default=0.0)

    @property
    def passed(self) -> bool:
        return self.sup_distance <= self.tol

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "z": self.z,
            "sup_distance": self.sup_distance,
            "tol": self.tol,
            "times": self.times,
            "distances": self.distances,
            "verdict": "PASS" if self.passed else "FAIL",
        }


def run_stationarity(
    scenario: Scenario,
    *,
    perturbation: Sequence[AtomicMeasure] | None = None,
    horizon: float | None = None,
    dt: float | None = None,
) -> StationarityReport:
    """Start the fluid solver at the invariant state with mass z0 and track its distance from it.

    ``perturbation`` (one measure per route) is added to the start state; the
    distance is still measured against the unperturbed invariant state.
    """
    exp = scenario.experiment
    data = scenario.fluid_data()
    ok, dev = is_in_P(data, scenario.z0)
    if not ok:
        raise NotInP(f"initial z0 is not in P (max deviation {dev:.3e})")
    state = make_invariant_state(data, scenario.z0, atoms=exp.atoms)
    xi = state.measures
    start = xi if perturbation is None else [a + b for a, b in zip(xi, perturbation)]
    sol = solve(data, start, horizon or exp.horizon, dt or exp.dt, atoms=exp.atoms, record_every=exp.record_every)
    distances = [vector_distance(m, xi) for m in sol.measures]
    return StationarityReport(scenario.name, sol.times.tolist(), distances, exp.stationarity_tol, scenario.z0.tolist())


# -- persistence -----------------------------------------------------------

_G = "%.17g".__mod__


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_G(x) if isinstance(x, float) else x for x in row])


def emit_plots(report, out_dir) -> list[Path]:
    """CSV series for external plotting; returns the files written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if isinstance(report, ConvergenceReport):
        p = out / "convergence.csv"
        _write_csv(p, ["r", "median_sup_distance", "max_sup_distance"],
                   [(float(r), m, x) for r, m, x in zip(report.r_list, report.median_sup, report.max_sup)])
        written.append(p)
        p = out / "distances.csv"
        rows = [
            (float(r), rep, float(t), float(report.distances[a, rep, k]))
            for a, r in enumerate(report.r_list)
            for rep in range(report.distances.shape[1])
            for k, t in enumerate(report.sample_times)
        ]
        _write_csv(p, ["r", "replication", "time", "distance"], rows)
        written.append(p)
        I = len(report.trajectory["fluid_z"][0]) if report.trajectory else 0
        p = out / "trajectory.csv"
        rows = []
        if report.trajectory:
            for k, t in enumerate(report.trajectory["time"]):
                rows.append([float(t)] + [float(x) for x in report.trajectory["fluid_z"][k]]
                            + [float(x) for x in report.trajectory["sim_z"][k]])
        _write_csv(p, ["time"] + [f"fluid_z_{i}" for i in range(I)] + [f"sim_z_{i}" for i in range(I)], rows)
        written.append(p)
    elif isinstance(report, LLNReport):
        p = out / "lln.csv"
        _write_csv(p, ["r", "median_discrepancy"], [(float(r), d) for r, d in zip(report.r_list, report.discrepancy)])
        written.append(p)
    elif isinstance(report, StationarityReport):
        p = out / "stationarity.csv"
        _write_csv(p, ["time", "distance"], [(float(t), float(d)) for t, d in zip(report.times, report.distances)])
        written.append(p)
    else:
        raise InvalidInput(f"unknown report type {type(report).__name__}")
    p = out / "report.json"
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    written.append(p)
    return written
