"""Start the fluid model at an invariant state and track how far it drifts.

Also runs the negative control: the same state plus a point mass.
"""

import argparse

from bwshare.harness import emit_plots, parse_scenario, run_stationarity
from bwshare.measure import AtomicMeasure


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenario")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--perturb-at", type=float, default=3.0)
    p.add_argument("--perturb-mass", type=float, default=0.5)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    sc = parse_scenario(args.scenario)
    base = run_stationarity(sc, horizon=args.horizon, dt=args.dt)
    pert = [AtomicMeasure.zero() for _ in range(sc.num_routes)]
    pert[0] = AtomicMeasure.dirac(args.perturb_at, args.perturb_mass)
    control = run_stationarity(sc, perturbation=pert, horizon=args.horizon, dt=args.dt)
    print(f"invariant start: sup distance {base.sup_distance:.5f} (tol {base.tol})")
    print(f"perturbed start: sup distance {control.sup_distance:.5f}")
    if args.out:
        emit_plots(base, f"{args.out}/invariant")
        emit_plots(control, f"{args.out}/perturbed")


if __name__ == "__main__":
    main()
