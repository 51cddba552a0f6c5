"""Residual of the fluid transport equation under joint dt / atom refinement."""

import argparse

from bwshare.allocator import AlphaFairPolicy
from bwshare.distributions import Exponential, HyperExponential
from bwshare.fluid import FluidData, fluid_equation_residual, solve, workload_identity_residual
from bwshare.topology import validate_topology


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--size", choices=["exponential", "hyperexponential"], default="exponential")
    args = p.parse_args()

    size = Exponential(1.0) if args.size == "exponential" else HyperExponential((0.5, 0.5), (1.0, 2.0))
    data = FluidData(validate_topology([[1]], [1.0]), AlphaFairPolicy.uniform(1), [0.5 / size.mean], [size])
    prev = None
    dt, atoms = 0.02, 256
    for _ in range(args.levels):
        sol = solve(data, [size.discretize(atoms)], 1.0, dt, atoms=atoms)
        res = fluid_equation_residual(sol)
        ratio = "" if prev is None else f"  ratio {prev / res:.2f}"
        print(f"dt={dt:<8g} atoms={atoms:<5d} residual {res:.3e}  workload identity {workload_identity_residual(sol):.1e}{ratio}")
        prev, dt, atoms = res, dt / 2, atoms * 2


if __name__ == "__main__":
    main()
