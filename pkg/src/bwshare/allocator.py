"""Weighted alpha-fair bandwidth allocation.

The allocation maximizes

    G_z(lam) = sum_{i: z_i > 0} kappa_i z_i^alpha lam_i^(1-alpha) / (1-alpha)   (alpha != 1)
             = sum_{i: z_i > 0} kappa_i z_i log(lam_i)                          (alpha == 1)

subject to A lam <= C and lam_i = 0 whenever z_i = 0. It is computed on the
dual: for resource prices p >= 0 the primal maximizer is

    lam_i(p) = z_i (kappa_i / sum_j p_j A_ji)^(1/alpha)

and the (smooth, convex) dual function is minimized over p >= 0 by a
projected Newton method with Armijo backtracking along the projection arc.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidInput, NonConvergence, TooManyRoutes
from .topology import NetworkTopology

KKT_TOL = 1e-8
MAX_ITER = 100_000
_ARMIJO = 1e-4
_INNER_TOL = 1e-13
_SHRINK = 1e-3
_STALL_ITERS = 50
_REGULARIZATION = (1e-13, 1e-8, 1e-4, 1e-1, 1e1, 1e3)


@dataclass(frozen=True)
class AlphaFairPolicy:
    alpha: float
    kappa: np.ndarray

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=float).reshape(-1)
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidInput(f"alpha must be > 0, got {self.alpha}")
        if kappa.size == 0 or np.any(kappa <= 0) or not np.all(np.isfinite(kappa)):
            raise InvalidInput("kappa must be a vector of positive weights")
        kappa.setflags(write=False)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def uniform(cls, num_routes: int, alpha: float = 1.0) -> "AlphaFairPolicy":
        return cls(alpha, np.ones(num_routes))

    def allocate(self, topology, z, warm_start=None) -> "AllocationResult":
        return allocate(topology, self, z, warm_start=warm_start)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "kappa": self.kappa.tolist()}


class SharingPolicy(Protocol):
    """Anything mapping flow counts to a feasible, scale-invariant allocation."""

    def allocate(self, topology: NetworkTopology, z, warm_start=None) -> "AllocationResult": ...


@dataclass
class AllocationResult:
    """Allocation ``lam`` with resource prices.

    ``prices`` are the Lagrange multipliers for the caller's ``z``; they scale
    like ``max(z)**alpha``. ``kkt_residual`` is measured on the instance
    normalized to ``max(z) == 1`` so that it does not depend on that scale.
    """

    lam: np.ndarray
    prices: np.ndarray
    kkt_residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam.tolist(),
            "prices": self.prices.tolist(),
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }


def objective_value(policy: AlphaFairPolicy, z, lam) -> float:
    """G_z(lam), including the -inf and empty-set conventions."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise InvalidInput("lam must be >= 0")
    pos = z > 0
    if not pos.any():
        return 0.0
    a = policy.alpha
    zp, lp, kp = z[pos], lam[pos], policy.kappa[pos]
    if a >= 1 and np.any(lp == 0):
        return -np.inf
    if a == 1:
        return float(np.sum(kp * zp * np.log(lp)))
    return float(np.sum(kp * zp**a * lp ** (1 - a) / (1 - a)))


def kkt_bound_residual(x: np.ndarray, g: np.ndarray) -> float:
    """First-order residual for min f(x) s.t. x >= 0: g >= 0 and x * g = 0."""
    return float(max(np.abs(x * g).max(), -g.min(), 0.0))


def _line_search(evaluate, x, f, g, d, r0):
    """Armijo backtracking along the projection arc."""
    beta = 1.0
    while beta > 1e-40:
        xn = np.maximum(x + beta * d, 0.0)
        fn, gn, Hn = evaluate(xn)
        if not np.isfinite(fn):
            # a price whose optimum is tiny must not jump to 0: shrink it geometrically
            xn = np.maximum(x + beta * d, _SHRINK * x)
            fn, gn, Hn = evaluate(xn)
        if np.isfinite(fn):
            if fn <= f + _ARMIJO * float(g @ (xn - x)):
                return True, xn, fn, gn, Hn
            # values agree to rounding: judge the step by the residual instead
            if abs(fn - f) <= 1e-13 * max(1.0, abs(f)) and kkt_bound_residual(xn, gn) < r0:
                return True, xn, fn, gn, Hn
        beta *= 0.5
    return False, x, f, g, None


def projected_newton(
    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0: np.ndarray,
    *,
    target: float,
    max_iter: int = MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Minimize a smooth convex function over the nonnegative orthant.

    ``evaluate(x)`` returns (value, gradient, Hessian), with value ``inf``
    outside the domain. Iterates until the bound-constrained KKT residual is
    at most ``target`` or no further progress is possible. Returns the final
    point, its gradient and the iteration count.
    """
    x = x0.copy()
    f, g, H = evaluate(x)
    if not np.isfinite(f):
        raise NonConvergence("starting point is outside the dual domain")
    it = 0
    r0 = kkt_bound_residual(x, g)
    best, since_best = r0, 0
    while it < max_iter and r0 > target and since_best < _STALL_ITERS:
        it += 1
        pg = x - np.maximum(x - g, 0.0)
        eps = min(1e-12, float(np.max(np.abs(pg))))
        active = (x <= eps) & (g > 0)
        free = ~active
        if free.all():
            Hf, gf = H, g
        elif free.any():
            Hf, gf = H[np.ix_(free, free)], g[free]
        else:
            Hf = None
        if Hf is not None:
            # Jacobi scaling: prices can span many orders of magnitude
            s = np.sqrt(np.maximum(np.diag(Hf), 1e-300))
            Hs = Hf / np.outer(s, s)
        accepted = False
        # near-singular Hessians (duplicate or nearly unused resources) get a
        # growing Levenberg-Marquardt shift, ending close to scaled gradient descent
        for reg in _REGULARIZATION:
            d = np.zeros_like(x)
            if Hf is not None:
                M = Hs + reg * np.eye(Hs.shape[0])
                try:
                    d[free] = np.linalg.solve(M, -gf / s) / s
                except np.linalg.LinAlgError:
                    d[free] = np.linalg.lstsq(M, -gf / s, rcond=None)[0] / s
            if active.any():
                d[active] = -g[active] / np.maximum(np.diag(H)[active], 1e-300)
            if not np.all(np.isfinite(d)):
                continue
            accepted, xn, fn, gn, Hn = _line_search(evaluate, x, f, g, d, r0)
            if accepted:
                break
        if not accepted or not np.any(xn != x):
            break
        x, f, g, H = xn, fn, gn, Hn
        r0 = kkt_bound_residual(x, g)
        # rounding noise can keep the residual just above target forever
        if r0 < 0.5 * best or r0 > 1e3 * target:
            best, since_best = min(best, r0), 0
        else:
            since_best += 1
    return x, g, it



def allocate(
    topology: NetworkTopology,
    policy: AlphaFairPolicy,
    z,
    *,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
    warm_start: np.ndarray | None = None,
) -> AllocationResult:
    """Weighted alpha-fair allocation Lambda(z) with its resource prices.

    ``warm_start`` is a price vector for the normalized instance, e.g. the
    ``normalized_prices`` attribute of a previous result.
    """
    A, C = topology.incidence, topology.capacities
    I, J = topology.num_routes, topology.num_resources
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != I:
        raise DimensionMismatch(f"z has length {z.shape[0]}, expected {I}")
    if policy.kappa.shape[0] != I:
        raise DimensionMismatch("kappa length does not match the number of routes")
    if not np.all(np.isfinite(z)) or np.any(z < 0):
        raise InvalidInput("z must be finite and >= 0")
    lam = np.zeros(I)
    prices = np.zeros(J)
    pos = z > 0
    if not pos.any():
        res = AllocationResult(lam, prices, 0.0, 0)
        res.normalized_prices = prices.copy()
        return res

    a = policy.alpha
    zmax = float(z.max())
    zz = z[pos] / zmax
    kap = policy.kappa[pos]
    Apos = A[:, pos]
    used = Apos.any(axis=1)  # resources no positive route touches keep price 0
    B = Apos[used]
    Cu = C[used]
    coef = zz * kap ** (1.0 / a)

    if zz.size == 1:
        # a lone route saturates its tightest resource
        j = int(np.argmin(Cu))
        lam1 = Cu[j]
        p = np.zeros(Cu.size)
        p[j] = kap[0] * (zz[0] / lam1) ** a
        return _finish(topology, policy, z, pos, used, B, Cu, coef, np.array([lam1]), p, 0, zmax, tol)

    def evaluate(p):
        q = B.T @ p
        if np.any(q <= 0):
            return np.inf, None, None
        lam_ = coef * q ** (-1.0 / a)
        if a == 1:
            val = float(np.sum(kap * zz * np.log(lam_)) - np.sum(kap * zz) + p @ Cu)
        else:
            val = float((q @ lam_) * a / (1.0 - a) + p @ Cu)
        grad = Cu - B @ lam_
        hess = (B * (lam_ / (a * q))) @ B.T
        return val, grad, hess

    p0 = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float).reshape(-1)
        if w.shape[0] == J:
            cand = np.maximum(w[used], 0.0)
            if np.all(B.T @ cand > 0):
                p0 = cand
    if p0 is None:
        p0 = np.ones(Cu.size)

    # overflow in far-off trial points is caught by the finiteness checks
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        p, _, iters = projected_newton(evaluate, p0, target=_INNER_TOL, max_iter=max_iter)
    lam_pos = coef * (B.T @ p) ** (-1.0 / a)
    return _finish(topology, policy, z, pos, used, B, Cu, coef, lam_pos, p, iters, zmax, tol)


def _finish(topology, policy, z, pos, used, B, Cu, coef, lam_pos, p, iters, zmax, tol):
    a = policy.alpha
    # remove rounding-level overshoot so that A lam <= C holds
    ratio = float(np.max((B @ lam_pos) / Cu))
    if ratio > 1.0:
        lam_pos = lam_pos / ratio
    q = B.T @ p
    recovered = coef * q ** (-1.0 / a)
    slack = Cu - B @ lam_pos
    kkt = float(
        max(
            np.max(np.abs(lam_pos - recovered)),
            np.max(np.abs(p * slack)),
            np.max(-slack, initial=0.0),
            np.max(-p, initial=0.0),
        )
    )
    if not np.isfinite(kkt) or kkt > tol:
        raise NonConvergence(f"allocation KKT residual {kkt:.3e} exceeds {tol:.1e} after {iters} iterations")
    I, J = topology.num_routes, topology.num_resources
    lam = np.zeros(I)
    lam[pos] = lam_pos
    pn = np.zeros(J)
    pn[used] = p
    res = AllocationResult(lam, pn * zmax**a, kkt, iters)
    res.normalized_prices = pn
    return res


def grid_oracle(topology: NetworkTopology, policy: AlphaFairPolicy, z, step: float) -> np.ndarray:
    """Brute-force maximizer of G_z over the feasible lattice of mesh ``step`` (I <= 3).

    The objective increases in every positive coordinate, so for each lattice
    choice of the other routes only the largest feasible value of the last
    positive route needs to be examined.
    """
    A, C = topology.incidence, topology.capacities
    I = topology.num_routes
    if I > 3:
        raise TooManyRoutes("grid_oracle supports at most 3 routes")
    if step <= 0:
        raise InvalidInput("step must be > 0")
    z = np.asarray(z, dtype=float).reshape(-1)
    lam = np.zeros(I)
    pos = np.flatnonzero(z > 0)
    if pos.size == 0:
        return lam
    last, others = pos[-1], pos[:-1]
    axes = []
    for i in others:
        cap = float(np.min(C[A[:, i] > 0]))
        axes.append(np.arange(int(np.floor(cap / step + 1e-9)) + 1) * step)
    if axes:
        mesh = np.stack([m.reshape(-1) for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    else:
        mesh = np.zeros((1, 0))
    load = mesh @ A[:, others].T  # (points, J)
    ok = np.all(load <= C + 1e-12, axis=1)
    room = np.min(np.where(A[:, last] > 0, C - load, np.inf), axis=1)
    ok &= room >= -1e-12
    mesh, room = mesh[ok], room[ok]
    top = np.floor(np.maximum(room, 0.0) / step + 1e-9) * step
    cand = np.zeros((mesh.shape[0], I))
    cand[:, others] = mesh
    cand[:, last] = top
    a = policy.alpha
    zp, kp = z[pos], policy.kappa[pos]
    lp = cand[:, pos]
    with np.errstate(divide="ignore"):
        if a == 1:
            vals = np.sum(kp * zp * np.log(lp), axis=1)
        else:
            vals = np.sum(kp * zp**a * lp ** (1 - a) / (1 - a), axis=1)
    if a >= 1:
        vals = np.where(np.any(lp == 0, axis=1), -np.inf, vals)
    return cand[int(np.argmax(vals))]
