"""Fluid model solutions by transport along characteristics.

On route i every atom moves left at the common per-flow rate
``Lambda_i(z) / z_i``. Writing the cumulative per-flow service as ``S_i(t)``,
an atom at residual x sits at the fixed coordinate ``y = x + S_i(t)``; the
solver stores mass and first moment in bins of fixed width in y, so shifting
is just an update of ``S_i`` and a bin leaves the system when its mean
reaches ``S_i``. Inflow adds a ``nu_i dt`` copy of the discretized size law
every step. Bins merge nearby atoms while keeping mass and first moment, so
the workload is carried exactly.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .allocator import AlphaFairPolicy, allocate
from .distributions import DEFAULT_ATOMS, Distribution
from .errors import AtomBudgetExceeded, DimensionMismatch, InvalidInput
from .measure import AtomicMeasure
from .simulator import smooth_indicator
from .topology import NetworkTopology

log = logging.getLogger(__name__)

BIN_FACTOR = 8  # bin width = (largest location) / (BIN_FACTOR * atoms)
MAX_BINS = 2_000_000
DEFAULT_THETAS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class FluidData:
    """Network, policy and per-route traffic (arrival rate nu, size law)."""

    topology: NetworkTopology
    policy: AlphaFairPolicy
    nu: np.ndarray
    sizes: Sequence[Distribution]
    allow_zero_rate: bool = False

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float).reshape(-1)
        I = self.topology.num_routes
        if self.nu.shape != (I,) or len(self.sizes) != I:
            raise DimensionMismatch("nu and sizes need one entry per route")
        if not np.all(np.isfinite(self.nu)) or np.any(self.nu < 0):
            raise InvalidInput("arrival rates must be finite and >= 0")
        if not self.allow_zero_rate and np.any(self.nu == 0):
            raise InvalidInput("arrival rates must be > 0 (set allow_zero_rate for tests)")

    @property
    def mu(self) -> np.ndarray:
        return np.array([1.0 / d.mean for d in self.sizes])

    @property
    def rho(self) -> np.ndarray:
        return self.nu / self.mu


class _Bins:
    """Mass and first moment of one route in fixed bins of the service coordinate."""

    def __init__(self, width: float):
        self.h = width
        self.base = 0  # global bin index of element 0
        self.mass = np.zeros(0)
        self.off = np.zeros(0)  # sum of mass * (y - left edge of bin)
        self.lo = 0
        self.hi = 0

    def _reserve(self, kmin: int, kmax: int) -> None:
        if self.lo == self.hi:
            self.base, self.lo, self.hi = kmin, 0, 0
            if self.mass.size < kmax - kmin + 1:
                n = 2 * (kmax - kmin + 1)
                self.mass, self.off = np.zeros(n), np.zeros(n)
            else:
                self.mass[:] = 0.0
                self.off[:] = 0.0
            return
        glo = min(self.base + self.lo, kmin)
        ghi = max(self.base + self.hi, kmax + 1)
        if glo >= self.base and ghi <= self.base + self.mass.size:
            return
        n = max(2 * (ghi - glo), 1024)
        mass, off = np.zeros(n), np.zeros(n)
        s = self.base + self.lo - glo
        mass[s : s + self.hi - self.lo] = self.mass[self.lo : self.hi]
        off[s : s + self.hi - self.lo] = self.off[self.lo : self.hi]
        self.mass, self.off = mass, off
        self.lo, self.hi = s, s + (self.hi - self.lo)
        self.base = glo
        if n > MAX_BINS:
            raise AtomBudgetExceeded(f"fluid route needs {n} bins (cap {MAX_BINS})")

    def add(self, y: np.ndarray, m: np.ndarray) -> None:
        if y.size == 0:
            return
        k = np.floor(y / self.h).astype(np.int64)
        kmin, kmax = int(k.min()), int(k.max())
        self._reserve(kmin, kmax)
        idx = k - kmin
        span = kmax - kmin + 1
        s = kmin - self.base
        self.mass[s : s + span] += np.bincount(idx, weights=m, minlength=span)
        self.off[s : s + span] += np.bincount(idx, weights=m * (y - k * self.h), minlength=span)
        self.lo = min(self.lo, s) if self.hi > self.lo else s
        self.hi = max(self.hi, s + span)

    def means(self) -> np.ndarray:
        m = self.mass[self.lo : self.hi]
        edges = (self.base + self.lo + np.arange(m.size)) * self.h
        return edges + np.divide(self.off[self.lo : self.hi], m, out=np.zeros_like(m), where=m > 0)

    def drop_below(self, S: float) -> None:
        """Delete the leading bins whose mean location is <= S (their mass reached 0)."""
        if self.lo == self.hi:
            return
        first = self.mass[self.lo]
        if first > 0 and (self.base + self.lo) * self.h + self.off[self.lo] / first > S:
            return
        mean = self.means()
        alive = (self.mass[self.lo : self.hi] > 0) & (mean > S)
        if not alive.any():
            self.mass[self.lo : self.hi] = 0.0
            self.off[self.lo : self.hi] = 0.0
            self.lo = self.hi
            return
        cut = self.lo + int(np.argmax(alive))
        self.mass[self.lo : cut] = 0.0
        self.off[self.lo : cut] = 0.0
        self.lo = cut

    def live_masses(self) -> np.ndarray:
        return self.mass[self.lo : self.hi]

    def total(self) -> float:
        return float(self.mass[self.lo : self.hi].sum())

    def workload(self, S: float) -> float:
        m = self.mass[self.lo : self.hi]
        edges = (self.base + self.lo + np.arange(m.size)) * self.h - S
        return float(m @ edges + self.off[self.lo : self.hi].sum())

    def measure(self, S: float) -> AtomicMeasure:
        m = self.mass[self.lo : self.hi]
        x = self.means() - S
        keep = (m > 0) & (x > 0)
        return AtomicMeasure(x[keep], m[keep])

    @property
    def num_bins(self) -> int:
        return self.hi - self.lo


@dataclass
class FluidSolution:
    """Recorded grid times with measures and auxiliary functions (rows = times)."""

    data: FluidData
    dt: float
    times: np.ndarray
    measures: list[list[AtomicMeasure]]
    z: np.ndarray
    tau: np.ndarray
    u: np.ndarray
    w: np.ndarray
    service: np.ndarray
    absorbed_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidInput(f"time {t} is not a recorded grid time")
        return k

    def measures_at(self, t: float) -> list[AtomicMeasure]:
        return self.measures[self.index_of(t)]

    def to_csv(self, path=None) -> str:
        I, J = self.z.shape[1], self.u.shape[1]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(
            ["time"] + [f"z_{i}" for i in range(I)] + [f"w_{i}" for i in range(I)]
            + [f"tau_{i}" for i in range(I)] + [f"u_{j}" for j in range(J)]
        )
        g = "%.17g".__mod__
        for k in range(self.times.size):
            wr.writerow([g(self.times[k])] + [g(x) for x in np.concatenate((self.z[k], self.w[k], self.tau[k], self.u[k]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _step_shift(m, x, v, m_in, target):
    """Shift d with sum m min(x, d) + sum m_in min(v, d/2) = target.

    Existing atoms (mass m at residual x) are shifted by d, the step's arrivals
    (mass m_in at size v) by d/2 on average. Flows finishing inside the step
    receive less than d, so d is chosen such that the service actually
    delivered equals ``target``. If all work present can be cleared, everything
    leaves and the delivered amount is returned instead.
    """
    keep = m > 0
    m, x = m[keep], x[keep]
    cap = float(m @ x + m_in @ v)
    if cap <= target:
        return float(max(x.max(initial=0.0), 2.0 * v.max(initial=0.0))), cap
    d = target / (m.sum() + 0.5 * m_in.sum())
    for _ in range(100):
        got = float(m @ np.minimum(x, d) + m_in @ np.minimum(v, 0.5 * d))
        gap = target - got
        if gap <= 1e-15 * target:
            break
        slope = float(m[x > d].sum() + 0.5 * m_in[v > 0.5 * d].sum())
        d += gap / slope
    return d, target


def solve(
    data: FluidData,
    zeta0: Sequence[AtomicMeasure],
    horizon: float,
    dt: float,
    *,
    atoms: int = DEFAULT_ATOMS,
    record_every: int = 1,
    record_times: Sequence[float] = (),
) -> FluidSolution:
    """Explicit-Euler transport of ``zeta0`` over [0, horizon].

    Lambda is evaluated at the start of each step. Arrivals during a step are
    placed as if they arrived mid-step. A route that is empty at the start of
    a step stays empty when, with the step's arrivals added, it would be
    allocated at least its work rate rho_i; it then accrues tau_i at rate
    rho_i. Otherwise the route is treated as holding the step's arrivals
    when its per-flow rate is computed.
    """
    top, pol = data.topology, data.policy
    I = top.num_routes
    if len(zeta0) != I:
        raise DimensionMismatch("zeta0 needs one measure per route")
    if not dt > 0 or not horizon >= 0:
        raise InvalidInput("need dt > 0 and horizon >= 0")
    for m in zeta0:
        if len(m) and m.locations[0] <= 0:
            raise InvalidInput("initial measures must not charge 0")
    A, C = top.incidence, top.capacities
    nu, rho = data.nu, data.rho
    batch = [d.discretize(atoms) for d in data.sizes]
    bins = []
    for i in range(I):
        top_loc = max(batch[i].locations.max(), zeta0[i].locations.max() if len(zeta0[i]) else 0.0)
        b = _Bins(top_loc / (BIN_FACTOR * atoms))
        b.add(zeta0[i].locations, zeta0[i].masses)
        bins.append(b)

    nsteps = int(round(horizon / dt))
    if abs(nsteps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidInput("horizon must be a multiple of dt")
    want = {0, nsteps}
    want.update(range(0, nsteps + 1, max(1, int(record_every))))
    for t in record_times:
        k = int(round(t / dt))
        if 0 <= k <= nsteps:
            want.add(k)

    S = np.zeros(I)
    tau = np.zeros(I)
    prices = None
    rec_t, rec_m, rec_z, rec_tau, rec_u, rec_w, rec_s = [], [], [], [], [], [], []
    absorbed_steps = np.zeros(I, dtype=np.int64)

    def record(k: int) -> None:
        t = k * dt
        rec_t.append(t)
        rec_m.append([b.measure(S[i]) for i, b in enumerate(bins)])
        rec_z.append([b.total() for b in bins])
        rec_w.append([b.workload(S[i]) for i, b in enumerate(bins)])
        rec_tau.append(tau.copy())
        rec_u.append(C * t - A @ tau)
        rec_s.append(S.copy())

    for k in range(nsteps):
        if k in want:
            record(k)
        z = np.array([b.total() for b in bins])
        empty = (z == 0) & (nu > 0)
        zeff = z.copy()
        zeff[empty] += nu[empty] * dt
        if zeff.any():
            res = allocate(top, pol, zeff, warm_start=prices)
            prices, lam = res.normalized_prices, res.lam
        else:
            lam = np.zeros(I)
        absorbed = (zeff == 0) | (empty & (lam >= rho * (1.0 - 1e-12)))
        absorbed_steps += absorbed
        for i in range(I):
            if absorbed[i]:
                tau[i] += rho[i] * dt
                continue
            b = bins[i]
            m_in = nu[i] * dt * batch[i].masses
            dS, served = _step_shift(b.live_masses(), b.means() - S[i], batch[i].locations, m_in, lam[i] * dt)
            S_old = S[i]
            S[i] += dS
            tau[i] += served
            b.drop_below(S[i])
            if nu[i] > 0:
                y = batch[i].locations + S_old + 0.5 * dS
                keep = y > S[i]
                b.add(y[keep], m_in[keep])
            if b.num_bins > MAX_BINS:
                raise AtomBudgetExceeded(f"route {i} holds {b.num_bins} bins")
    record(nsteps)
    return FluidSolution(
        data, dt, np.array(rec_t), rec_m, np.array(rec_z), np.array(rec_tau), np.array(rec_u),
        np.array(rec_w), np.array(rec_s), absorbed_steps,
    )


def workload_identity_residual(sol: FluidSolution) -> float:
    """max |w(t) - w(0) - rho t + tau(t)| over recorded times and routes."""
    rho = sol.data.rho
    r = sol.w - sol.w[0] - np.outer(sol.times, rho) + sol.tau
    return float(np.max(np.abs(r)))


def fluid_equation_residual(sol: FluidSolution, thetas: Sequence[float] = DEFAULT_THETAS) -> float:
    """Largest violation of the weak transport equation over the recorded grid.

    For f(x) = 1 - (1 + theta x) exp(-theta x):

        <f, zeta_i(t)> - <f, zeta_i(0)> + int_0^t <f', zeta_i> Lambda_i(z)/z_i ds
                       - nu_i <f, size law_i> int_0^t 1{z_i > 0} ds

    with Lambda recomputed from the recorded z and trapezoid time integrals.
    """
    data = sol.data
    top, pol = data.topology, data.policy
    I = top.num_routes
    K = sol.times.size
    rate = np.zeros((K, I))
    prices = None
    for k in range(K):
        z = sol.z[k]
        if z.any():
            res = allocate(top, pol, z, warm_start=prices)
            prices = res.normalized_prices
            rate[k] = np.divide(res.lam, z, out=np.zeros(I), where=z > 0)
    busy = (sol.z > 0).astype(float)
    busy_int = cumulative_trapezoid(busy, sol.times, axis=0, initial=0.0)
    worst = 0.0
    for th in thetas:
        f = smooth_indicator(th)

        def fprime(x, th=th):
            return th * th * x * np.exp(-th * x)

        f_theta = np.array([d.expect(f) for d in data.sizes])
        pf = np.zeros((K, I))
        pdf = np.zeros((K, I))
        for k in range(K):
            for i, m in enumerate(sol.measures[k]):
                if len(m):
                    pf[k, i] = m.masses @ f(m.locations)
                    pdf[k, i] = m.masses @ fprime(m.locations)
        drain = cumulative_trapezoid(pdf * rate, sol.times, axis=0, initial=0.0)
        resid = pf - pf[0] + drain - data.nu * f_theta * busy_int
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst
