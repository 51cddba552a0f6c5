"""Network structure: incidence matrix and resource capacities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyRoute, NonBinaryEntry, NonpositiveCapacity


@dataclass(frozen=True)
class NetworkTopology:
    """Fixed (A, C) pair; ``incidence[j, i] == 1`` iff route ``i`` uses resource ``j``.

    Routes and resources are 0-based.
    """

    incidence: np.ndarray
    capacities: np.ndarray
    route_labels: tuple[str, ...] = field(default=())
    resource_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.incidence.setflags(write=False)
        self.capacities.setflags(write=False)

    @property
    def num_routes(self) -> int:
        return self.incidence.shape[1]

    @property
    def num_resources(self) -> int:
        return self.incidence.shape[0]

    @property
    def raw(self) -> tuple[list[list[int]], list[float]]:
        return self.incidence.astype(int).tolist(), self.capacities.tolist()

    def to_dict(self) -> dict:
        A, C = self.raw
        return {"incidence": A, "capacities": C}


def validate_topology(
    incidence: Sequence[Sequence[float]] | np.ndarray,
    capacities: Sequence[float] | np.ndarray,
    route_labels: Sequence[str] = (),
    resource_labels: Sequence[str] = (),
) -> NetworkTopology:
    A = np.array(incidence, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    C = np.array(capacities, dtype=float).reshape(-1)
    if A.ndim != 2 or A.size == 0:
        raise DimensionMismatch("incidence must be a non-empty J x I matrix")
    if A.shape[0] != C.shape[0]:
        raise DimensionMismatch(
            f"incidence has {A.shape[0]} rows but {C.shape[0]} capacities were given"
        )
    if not np.all((A == 0) | (A == 1)):
        raise NonBinaryEntry("incidence entries must be 0 or 1")
    empty = np.flatnonzero(A.sum(axis=0) == 0)
    if empty.size:
        raise EmptyRoute(f"route(s) {empty.tolist()} use no resource")
    if not np.all(np.isfinite(C)):
        raise NonpositiveCapacity("capacities must be finite")
    if np.any(C <= 0):
        raise NonpositiveCapacity(f"capacities must be > 0, got {C.tolist()}")
    return NetworkTopology(A, C, tuple(route_labels), tuple(resource_labels))


def resource_load(topology: NetworkTopology, rho: Sequence[float] | np.ndarray) -> np.ndarray:
    """Return ``A @ rho``; callers compare the result against the capacities."""
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.shape[0] != topology.num_routes:
        raise DimensionMismatch(
            f"expected {topology.num_routes} route values, got {rho.shape[0]}"
        )
    return topology.incidence @ rho


def linear_network(num_resources: int = 2, capacity: float = 1.0) -> NetworkTopology:
    """The classic linear network: route 0 crosses every resource, route j+1 uses resource j only."""
    J = num_resources
    A = np.zeros((J, J + 1))
    A[:, 0] = 1
    A[np.arange(J), np.arange(1, J + 1)] = 1
    return validate_topology(A, np.full(J, capacity))
