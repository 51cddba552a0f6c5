"""Invariant states of the fluid model under weighted alpha-fair sharing.

Invariant states are ``xi_i = z_i * excess(size law_i)`` with ``z`` in

    P = { z >= 0 : Lambda_i(z) = rho_i for every i with z_i > 0 }.

Points of P are parametrized by workloads on the critical resources through
the lifting map: ``lift_workload(w)`` minimizes

    F(z) = 1/(alpha+1) * sum_i nu_i kappa_i mu_i^(alpha-1) (z_i / nu_i)^(alpha+1)

subject to ``sum_i A_ji z_i / mu_i >= w_j`` on the critical resources. Its
minimizer has the form ``z_i = rho_i (s_i / kappa_i)^(1/alpha)`` with
``s = A_crit^T q`` for multipliers ``q >= 0``; the solver minimizes the
convex dual in ``q`` with the allocator's projected Newton method.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocator import KKT_TOL, allocate, projected_newton
from .errors import DimensionMismatch, EmptyCriticalSet, InvalidInput, NonConvergence, NotInP
from .fluid import FluidData
from .measure import AtomicMeasure, levy_distance
from .distributions import DEFAULT_ATOMS

log = logging.getLogger(__name__)

CRITICAL_TOL = 1e-9
NEAR_CRITICAL_TOL = 1e-6
P_TOL = 1e-6


@dataclass
class CriticalSet:
    resources: np.ndarray  # indices j with (A rho)_j = C_j
    feasible: bool  # A rho <= C: invariant states exist at all
    load: np.ndarray
    near_critical: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __contains__(self, j) -> bool:
        return int(j) in set(self.resources.tolist())

    def __len__(self) -> int:
        return self.resources.size


@dataclass
class InvariantState:
    z: np.ndarray
    measures: list[AtomicMeasure]
    multipliers: np.ndarray | None
    critical: np.ndarray

    def to_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "q": None if self.multipliers is None else self.multipliers.tolist(),
            "critical_resources": self.critical.tolist(),
            "measures": [m.to_dict() for m in self.measures],
        }


def critical_resources(data: FluidData, tol: float = CRITICAL_TOL) -> CriticalSet:
    """Resources loaded exactly to capacity by the work rates rho."""
    load = data.topology.incidence @ data.rho
    C = data.topology.capacities
    gap = load - C
    crit = np.flatnonzero(np.abs(gap) <= tol)
    near = np.flatnonzero((np.abs(gap) > tol) & (np.abs(gap) <= NEAR_CRITICAL_TOL))
    if near.size:
        log.warning("resources %s are within %.0e of critical; J_* is not robust here", near.tolist(), NEAR_CRITICAL_TOL)
    return CriticalSet(crit, bool(np.all(gap <= tol)), load, near)


def is_in_P(data: FluidData, z, tol: float = P_TOL) -> tuple[bool, float]:
    """Whether Lambda_i(z) = rho_i on the positive routes; also the largest deviation."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if np.any(z < 0):
        raise InvalidInput("z must be >= 0")
    pos = z > 0
    if not pos.any():
        return True, 0.0
    lam = allocate(data.topology, data.policy, z).lam
    dev = float(np.max(np.abs(lam[pos] - data.rho[pos])))
    return dev <= tol, dev


def workload_of(data: FluidData, z, resources=None) -> np.ndarray:
    """w_j(z) = sum_i A_ji z_i / mu_i, on ``resources`` (default: the critical ones)."""
    if resources is None:
        resources = critical_resources(data).resources
    A = data.topology.incidence[np.asarray(resources, dtype=np.int64)]
    return A @ (np.asarray(z, dtype=float) / data.mu)


def z_from_multipliers(data: FluidData, q, resources=None) -> np.ndarray:
    """z_i = rho_i (sum_j q_j A_ji / kappa_i)^(1/alpha) over the critical resources."""
    if resources is None:
        resources = critical_resources(data).resources
    A = data.topology.incidence[np.asarray(resources, dtype=np.int64)]
    s = A.T @ np.asarray(q, dtype=float)
    return data.rho * (s / data.policy.kappa) ** (1.0 / data.policy.alpha)


def lift_workload(data: FluidData, w, *, tol: float = KKT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Minimal-F state carrying workload at least ``w`` on each critical resource.

    ``w`` is indexed like ``critical_resources(data).resources``. Returns
    ``(z, q)`` with q the multipliers of the workload constraints.
    """
    crit = critical_resources(data)
    if len(crit) == 0:
        raise EmptyCriticalSet("no critical resources: the lifting map is undefined")
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (len(crit),):
        raise DimensionMismatch(f"w needs {len(crit)} entries, one per critical resource")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInput("w must be finite and >= 0")
    I = data.topology.num_routes
    if not w.any():
        return np.zeros(I), np.zeros(len(crit))

    a = data.policy.alpha
    kap = data.policy.kappa
    mu, rho = data.mu, data.rho
    B = data.topology.incidence[crit.resources]
    wmax = float(w.max())
    wn = w / wmax  # z scales with w, q with w**alpha
    c = a / (a + 1.0)

    def z_of(s):
        return rho * (s / kap) ** (1.0 / a)

    def evaluate(q):
        s = B.T @ q
        z = z_of(s)
        val = c * float(np.sum(s * z / mu)) - float(q @ wn)
        grad = B @ (z / mu) - wn
        # dz/ds / mu in closed form; at s = 0 it is infinite for alpha > 1, so
        # floor s to keep Newton steps finite when a multiplier touches 0
        sf = np.maximum(s, 1e-300)
        curv = rho * sf ** (1.0 / a - 1.0) / (a * kap ** (1.0 / a) * mu)
        hess = (B * curv) @ B.T
        return val, grad, hess

    def residual(q):
        z = z_of(B.T @ q)
        slack = B @ (z / mu) - wn
        return z, float(max(np.max(np.abs(q * slack)), np.max(-slack, initial=0.0)))

    q, g, iters = projected_newton(evaluate, np.ones(len(crit)), target=1e-13)
    z, kkt = residual(q)
    # multipliers stalled just above 0 leave tiny spurious z_i; snap them to 0
    snapped = np.where(q <= 1e-12 * q.max(), 0.0, q)
    z_s, kkt_s = residual(snapped)
    if kkt_s <= max(kkt, 1e-12):
        q, z, kkt = snapped, z_s, kkt_s
    if not math.isfinite(kkt) or kkt > tol:
        raise NonConvergence(f"lift_workload KKT residual {kkt:.3e} after {iters} iterations")
    return z * wmax, q * wmax**a


def make_invariant_state(data: FluidData, z, *, atoms: int = DEFAULT_ATOMS, tol: float = P_TOL) -> InvariantState:
    """xi_i = z_i * excess(size law_i), discretized; requires z in P."""
    z = np.asarray(z, dtype=float).reshape(-1)
    ok, dev = is_in_P(data, z, tol)
    if not ok:
        raise NotInP(f"z is not in P (max |Lambda_i(z) - rho_i| = {dev:.3e})")
    measures = [
        data.sizes[i].excess().discretize(atoms).scale(z[i]) if z[i] > 0 else AtomicMeasure.zero()
        for i in range(z.size)
    ]
    crit = critical_resources(data)
    q = None
    if len(crit) and z.any():
        _, q = lift_workload(data, workload_of(data, z, crit.resources))
    return InvariantState(z, measures, q, crit.resources)


@dataclass
class InvariantCheck:
    ok: bool
    feasible: bool
    in_P: bool
    p_deviation: float
    shape_distances: list[float]
    tol: float

    def to_dict(self) -> dict:
        return {
            "invariant": self.ok,
            "feasible": self.feasible,
            "in_P": self.in_P,
            "p_deviation": self.p_deviation,
            "shape_distances": self.shape_distances,
            "tol": self.tol,
        }


def is_invariant_state(
    data: FluidData,
    xi: Sequence[AtomicMeasure],
    tol: float | None = None,
    *,
    atoms: int = DEFAULT_ATOMS,
    p_tol: float = P_TOL,
) -> InvariantCheck:
    """Checks (a) A rho <= C, (b) <1, xi> in P and (c) each xi_i close to z_i * excess law.

    ``tol`` is the Levy tolerance for (c), by default 3 / sqrt(atoms).
    """
    if tol is None:
        tol = 3.0 / math.sqrt(atoms)
    if len(xi) != data.topology.num_routes:
        raise DimensionMismatch("xi needs one measure per route")
    feasible = critical_resources(data).feasible
    z = np.array([m.total_mass for m in xi])
    in_p, dev = is_in_P(data, z, p_tol)
    dists = [
        levy_distance(m, data.sizes[i].excess().discretize(atoms).scale(z[i]) if z[i] > 0 else AtomicMeasure.zero())
        for i, m in enumerate(xi)
    ]
    ok = feasible and in_p and all(d <= tol for d in dists)
    return InvariantCheck(ok, feasible, in_p, dev, dists, tol)
