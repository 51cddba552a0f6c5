"""Command-line entry point ``bwshare``.

Exit status: 0 on success / PASS, 2 on a FAIL verdict, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import BwshareError
from .fluid import solve
from .harness import (
    emit_plots,
    parse_scenario,
    resolve_seed,
    run_convergence,
    run_lln,
    run_stationarity,
)
from .invariant import critical_resources, is_in_P, is_invariant_state, lift_workload, make_invariant_state
from .measure import AtomicMeasure
from .simulator import init_sim, run_until

PASS, ERROR, FAIL = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _print_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def cmd_allocate(args) -> int:
    sc = parse_scenario(args.scenario)
    res = sc.policy.allocate(sc.topology, np.asarray(_floats(args.z)))
    _print_json(res.to_dict())
    return PASS


def cmd_simulate(args) -> int:
    sc = parse_scenario(args.scenario)
    seed = resolve_seed(args.seed, sc)
    st = init_sim(sc, args.r, seed)
    trace = run_until(st, args.horizon)
    text = trace.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return PASS


def cmd_fluid(args) -> int:
    sc = parse_scenario(args.scenario)
    horizon = args.horizon if args.horizon is not None else sc.experiment.horizon
    dt = args.dt if args.dt is not None else sc.experiment.dt
    sol = solve(sc.fluid_data(), sc.initial_fluid_state(), horizon, dt,
                atoms=sc.experiment.atoms, record_every=args.record_every)
    text = sol.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.dump_measures:
        d = Path(args.dump_measures)
        d.mkdir(parents=True, exist_ok=True)
        for t, ms in zip(sol.times, sol.measures):
            with open(d / f"t_{t:.6f}.json", "w", encoding="utf-8") as fh:
                json.dump({"time": float(t), "measures": [m.to_dict() for m in ms]}, fh)
    return PASS


def cmd_invariant(args) -> int:
    sc = parse_scenario(args.scenario)
    data = sc.fluid_data()
    crit = critical_resources(data)
    out = {
        "critical_resources": crit.resources.tolist(),
        "feasible": crit.feasible,
        "load": crit.load.tolist(),
    }
    if args.w is not None:
        z, q = lift_workload(data, _floats(args.w))
        ok, dev = is_in_P(data, z)
        out.update(z=z.tolist(), q=q.tolist(), in_P=ok, p_deviation=dev)
    elif args.z is not None:
        z = np.asarray(_floats(args.z))
        ok, dev = is_in_P(data, z)
        out.update(z=z.tolist(), in_P=ok, p_deviation=dev)
        if ok:
            state = make_invariant_state(data, z, atoms=sc.experiment.atoms)
            out["q"] = None if state.multipliers is None else state.multipliers.tolist()
    elif args.check is not None:
        with open(args.check, encoding="utf-8") as fh:
            raw = json.load(fh)
        items = raw["measures"] if isinstance(raw, dict) else raw
        xi = [AtomicMeasure.from_dict(m) for m in items]
        check = is_invariant_state(data, xi, atoms=sc.experiment.atoms)
        out.update(check.to_dict())
        _print_json(out)
        return PASS if check.ok else FAIL
    _print_json(out)
    return PASS


def _finish(report, out_dir) -> int:
    if out_dir:
        emit_plots(report, out_dir)
    d = report.to_dict()
    d.pop("distances", None)
    _print_json(d)
    return PASS if report.passed else FAIL


def cmd_converge(args) -> int:
    sc = parse_scenario(args.scenario)
    report = run_convergence(sc, seed=resolve_seed(args.seed, sc), replications=args.replications)
    return _finish(report, args.out_dir)


def cmd_lln(args) -> int:
    sc = parse_scenario(args.scenario)
    report = run_lln(sc, seed=resolve_seed(args.seed, sc), replications=args.replications)
    return _finish(report, args.out_dir)


def cmd_stationary(args) -> int:
    sc = parse_scenario(args.scenario)
    pert = None
    if args.perturb:
        route, loc, mass = args.perturb.split(":")
        pert = [AtomicMeasure.zero() for _ in range(sc.num_routes)]
        pert[int(route)] = AtomicMeasure.dirac(float(loc), float(mass))
    report = run_stationarity(sc, perturbation=pert)
    return _finish(report, args.out_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bwshare", description="Flow-level bandwidth-sharing simulator and fluid solver.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("allocate", help="alpha-fair allocation for given flow counts")
    s.add_argument("--scenario", required=True)
    s.add_argument("--z", required=True, help="comma-separated flow counts")
    s.set_defaults(func=cmd_allocate)

    s = sub.add_parser("simulate", help="stochastic simulation; writes the event trace as CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--r", type=float, default=1.0, help="scaling parameter")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--out", default=None, help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fluid", help="fluid model solution; writes z, w, tau, u as CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--horizon", type=float, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--record-every", type=int, default=10)
    s.add_argument("--out", default=None)
    s.add_argument("--dump-measures", default=None, help="directory for per-time measure files")
    s.set_defaults(func=cmd_fluid)

    s = sub.add_parser("invariant", help="critical resources, lifting map and invariant-state checks")
    s.add_argument("--scenario", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--w", default=None, help="workloads on the critical resources")
    g.add_argument("--z", default=None, help="flow masses to test for membership in P")
    g.add_argument("--check", default=None, help="JSON file with per-route measures")
    s.set_defaults(func=cmd_invariant)

    for name, func, hlp in (
        ("converge", cmd_converge, "fluid-limit convergence experiment"),
        ("lln", cmd_lln, "law-of-large-numbers experiment for the load process"),
        ("stationary", cmd_stationary, "fluid run started at an invariant state"),
    ):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--scenario", required=True)
        s.add_argument("--out-dir", default=None)
        s.add_argument("--seed", type=int, default=None, help="overrides BWSHARE_SEED and the scenario seed")
        if name != "stationary":
            s.add_argument("--replications", type=int, default=None)
        else:
            s.add_argument("--perturb", default=None, help="route:location:mass point mass added to the start state")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (BwshareError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
