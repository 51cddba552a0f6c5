"""Fluid-limit convergence study: D(r) for one or more scenarios.

    python3 scripts/run_convergence.py scenarios/single_route_hyperexp.json --out results/single
"""

import argparse
import json
import logging
import time

from bwshare.harness import emit_plots, parse_scenario, run_convergence


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--out", default=None, help="output directory (one subdirectory per scenario)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--r", type=float, nargs="+", default=None, help="override the scenario's r_list")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    for path in args.scenarios:
        sc = parse_scenario(path)
        t0 = time.perf_counter()
        rep = run_convergence(sc, seed=args.seed, r_list=args.r, replications=args.replications)
        d = rep.to_dict()
        print(f"{sc.name}: {time.perf_counter() - t0:.1f}s")
        for r, med, mx in zip(rep.r_list, rep.median_sup, rep.max_sup):
            print(f"  r={r:>8g}  median sup {med:.4f}  max sup {mx:.4f}")
        print(f"  monotone={rep.monotone} halved={rep.halved} verdict={d['verdict']}")
        if args.out:
            emit_plots(rep, f"{args.out}/{sc.name}")


if __name__ == "__main__":
    main()
