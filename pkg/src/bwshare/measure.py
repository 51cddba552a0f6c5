"""Finite atomic measures on the half-line and weak-topology metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidInput, TooManyAtoms

MERGE_TOL = 1e-12
PROHOROV_MAX_ATOMS = 12


def _merge_sorted(locs: np.ndarray, masses: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    if locs.size < 2:
        return locs, masses
    gaps = np.diff(locs) > tol
    if gaps.all():
        return locs, masses
    starts = np.concatenate(([0], np.flatnonzero(gaps) + 1))
    m = np.add.reduceat(masses, starts)
    mx = np.add.reduceat(masses * locs, starts)
    return mx / m, m


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite sum of point masses on [0, inf).

    Construction sorts atoms, drops zero masses and merges atoms closer than
    ``MERGE_TOL`` (mass-weighted location, so total mass and first moment are kept).
    """

    locations: np.ndarray
    masses: np.ndarray

    def __init__(self, locations: Iterable[float] = (), masses: Iterable[float] | None = None):
        locs = np.asarray(list(locations) if not isinstance(locations, np.ndarray) else locations, dtype=float).reshape(-1)
        if masses is None:
            m = np.ones_like(locs)
        else:
            m = np.asarray(list(masses) if not isinstance(masses, np.ndarray) else masses, dtype=float).reshape(-1)
        if locs.shape != m.shape:
            raise DimensionMismatch("locations and masses must have equal length")
        if locs.size:
            if not (np.all(np.isfinite(locs)) and np.all(np.isfinite(m))):
                raise InvalidInput("atoms must be finite")
            if locs.min() < 0:
                raise InvalidInput("atom locations must be >= 0")
            if m.min() < 0:
                raise InvalidInput("atom masses must be >= 0")
            keep = m > 0
            locs, m = locs[keep], m[keep]
            order = np.argsort(locs, kind="stable")
            locs, m = _merge_sorted(locs[order], m[order], MERGE_TOL)
        locs.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "masses", m)

    @classmethod
    def zero(cls) -> "AtomicMeasure":
        return cls()

    @classmethod
    def dirac(cls, x: float, mass: float = 1.0) -> "AtomicMeasure":
        return cls([x], [mass])

    def __len__(self) -> int:
        return self.locations.size

    def __repr__(self) -> str:
        if len(self) > 6:
            return f"AtomicMeasure(<{len(self)} atoms>, mass={self.total_mass:.6g})"
        body = " + ".join(f"{m:g}*d({x:g})" for x, m in zip(self.locations, self.masses))
        return f"AtomicMeasure({body or '0'})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return np.array_equal(self.locations, other.locations) and np.array_equal(
            self.masses, other.masses
        )

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(
            np.concatenate((self.locations, other.locations)),
            np.concatenate((self.masses, other.masses)),
        )

    def scale(self, factor: float) -> "AtomicMeasure":
        if factor < 0:
            raise InvalidInput("scale factor must be >= 0")
        return AtomicMeasure(self.locations, self.masses * factor)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def first_moment(self) -> float:
        return float(self.masses @ self.locations)

    @property
    def is_zero(self) -> bool:
        return len(self) == 0

    def cdf(self, x) -> np.ndarray:
        """Unnormalized cumulative mass ``xi([0, x])``."""
        cums = np.concatenate(([0.0], np.cumsum(self.masses)))
        return cums[np.searchsorted(self.locations, x, side="right")]

    def to_dict(self) -> dict:
        return {"locations": self.locations.tolist(), "masses": self.masses.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "AtomicMeasure":
        return cls(data.get("locations", []), data.get("masses", []))


def integrate(f: Callable, xi: AtomicMeasure) -> float:
    """<f, xi> = sum_k mass_k f(location_k)."""
    if xi.is_zero:
        return 0.0
    try:
        vals = np.asarray(f(xi.locations), dtype=float)
        if vals.shape != xi.locations.shape:
            vals = np.broadcast_to(vals, xi.locations.shape)
    except (TypeError, ValueError):
        vals = np.array([f(x) for x in xi.locations], dtype=float)
    return float(xi.masses @ vals)


def shift_left(xi: AtomicMeasure, x: float) -> AtomicMeasure:
    """Push forward under y -> (y - x)^+, deleting mass that lands on 0."""
    if x < 0:
        raise InvalidInput("shift must be >= 0")
    if x == 0:
        keep = xi.locations > 0
        if keep.all():
            return xi
        return AtomicMeasure(xi.locations[keep], xi.masses[keep])
    locs = xi.locations - x
    keep = locs > 0
    return AtomicMeasure(locs[keep], xi.masses[keep])


def _levy_ok(xi: AtomicMeasure, zeta: AtomicMeasure, eps: float) -> bool:
    # F_zeta(x) <= F_xi(x + eps) + eps for all x; worst x sit on zeta's atoms.
    for a, b in ((xi, zeta), (zeta, xi)):
        if b.is_zero:
            continue
        Fb = np.cumsum(b.masses)
        Fa = a.cdf(b.locations + eps)
        if np.max(Fb - Fa) > eps:
            return False
    return True


def levy_distance(xi: AtomicMeasure, zeta: AtomicMeasure, tol: float = 1e-12) -> float:
    """Levy-type distance between the (unnormalized) cumulative mass functions.

    Smallest eps with F_xi(x - eps) - eps <= F_zeta(x) <= F_xi(x + eps) + eps for
    all x, found by bisection to absolute tolerance ``tol``.
    """
    if _levy_ok(xi, zeta, 0.0):
        return 0.0
    lo, hi = 0.0, max(xi.total_mass, zeta.total_mass)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _levy_ok(xi, zeta, mid):
            hi = mid
        else:
            lo = mid
    return hi


def _subset_masks(n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.int64)


def _prohorov_ok(xi: AtomicMeasure, zeta: AtomicMeasure, eps: float, masks) -> bool:
    for a, b, M in ((xi, zeta, masks[0]), (zeta, xi, masks[1])):
        if a.is_zero:
            continue
        # every closed B reduces to a subset of a's atoms
        lhs = M @ a.masses
        if b.is_zero:
            rhs = np.zeros_like(lhs)
        else:
            near = (np.abs(a.locations[:, None] - b.locations[None, :]) < eps).astype(np.int64)
            hit = (M @ near) > 0
            rhs = hit @ b.masses
        if np.any(lhs > rhs + eps):
            return False
    return True


def prohorov_exact(xi: AtomicMeasure, zeta: AtomicMeasure, tol: float = 1e-12) -> float:
    """Brute-force generalized Prohorov distance for measures with few atoms."""
    if max(len(xi), len(zeta)) > PROHOROV_MAX_ATOMS:
        raise TooManyAtoms(f"prohorov_exact supports at most {PROHOROV_MAX_ATOMS} atoms per measure")
    masks = (_subset_masks(len(xi)), _subset_masks(len(zeta)))
    lo, hi = 0.0, max(xi.total_mass, zeta.total_mass)
    if hi == 0.0:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _prohorov_ok(xi, zeta, mid, masks):
            hi = mid
        else:
            lo = mid
    # an exact match passes at every eps > 0; report it as 0
    return 0.0 if hi <= tol and xi == zeta else hi


METRICS = {"levy": levy_distance, "prohorov": prohorov_exact}


def vector_distance(
    xi: Sequence[AtomicMeasure], zeta: Sequence[AtomicMeasure], metric: str = "levy"
) -> float:
    """Componentwise maximum of a scalar metric."""
    if len(xi) != len(zeta):
        raise DimensionMismatch(f"vectors have lengths {len(xi)} and {len(zeta)}")
    try:
        d = METRICS[metric]
    except KeyError:
        raise InvalidInput(f"unknown metric {metric!r}") from None
    return max((d(a, b) for a, b in zip(xi, zeta)), default=0.0)
