"""Law-of-large-numbers check for the fluid-scaled load process."""

import argparse

import numpy as np

from bwshare.harness import emit_plots, parse_scenario, run_lln


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--r", type=float, nargs="+", default=None)
    args = p.parse_args()

    for path in args.scenarios:
        sc = parse_scenario(path)
        rep = run_lln(sc, seed=args.seed, r_list=args.r, replications=args.replications)
        bound = (np.abs(sc.nu).max() + np.abs(sc.rho).max()) / np.asarray(rep.r_list)
        print(sc.name)
        for r, d, b in zip(rep.r_list, rep.discrepancy, bound):
            print(f"  r={r:>8g}  median discrepancy {d:.5f}  (|nu|+|rho|)/r = {b:.5f}")
        print(f"  decreasing={rep.decreasing} passed={rep.passed}")
        if args.out:
            emit_plots(rep, f"{args.out}/{sc.name}")


if __name__ == "__main__":
    main()
