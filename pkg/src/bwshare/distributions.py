"""Parametric document-size / interarrival laws and the excess-lifetime transform.

Every law is a probability measure on (0, inf) with finite mean. Besides the
tail P(X > x), each family knows its integrated tails

    IT(x)  = int_x^inf P(X > y) dy        (so IT(0) = mean)
    IT2(x) = int_x^inf IT(y) dy           (= E[((X - x)^+)^2] / 2)

which give the excess-lifetime law in closed form (its tail is mu * IT) and
mean-preserving discretizations (bin means follow from IT at quantiles).
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .errors import InvalidInput
from .measure import AtomicMeasure

DEFAULT_ATOMS = 512


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _open_unit(rng: np.random.Generator, size: int) -> np.ndarray:
    # uniforms in (0, 1): never exactly 0 (zero-size documents) or 1 (infinite quantiles)
    return rng.random(size) + 2.0**-54


class Distribution:
    """Base class; subclasses provide tail, integrated tails and moments."""

    kind = "abstract"
    support_max = math.inf
    breakpoints: tuple[float, ...] = ()

    # -- required -------------------------------------------------------
    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    def tail(self, x):
        raise NotImplementedError

    def integrated_tail(self, x):
        raise NotImplementedError

    def integrated_tail2(self, x):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # -- derived --------------------------------------------------------
    @property
    def rate(self) -> float:
        """mu = 1 / mean."""
        return 1.0 / self.mean

    def cdf(self, x):
        return 1.0 - self.tail(x)

    def density(self, x):
        raise NotImplementedError(f"{self.kind} has no density")

    @property
    def is_discrete(self) -> bool:
        return False

    def quantile(self, u):
        """Generalized inverse inf{x : F(x) >= u}, by vectorized bisection."""
        u = np.atleast_1d(_as_array(u))
        out = np.zeros_like(u)
        inner = (u > 0) & (u < 1)
        out[u >= 1] = self.support_max
        if not inner.any():
            return out
        uu = u[inner]
        hi = np.full_like(uu, min(self.support_max, max(self.mean, 1e-300)))
        if not math.isfinite(self.support_max):
            for _ in range(2000):
                short = self.cdf(hi) < uu
                if not short.any():
                    break
                hi[short] *= 2.0
        lo = np.zeros_like(uu)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < uu
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(hi, 1e-300)):
                break
        out[inner] = hi
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF sampling on the caller's stream."""
        return self.quantile(_open_unit(rng, size))

    def expect(self, f: Callable[[float], float]) -> float:
        """<f, law> by adaptive quadrature against the density."""
        edges = [0.0, *sorted(b for b in self.breakpoints if 0.0 < b < self.support_max)]
        total = 0.0
        for a, b in zip(edges, edges[1:] + [self.support_max]):
            if b <= a:
                continue
            val, _ = integrate.quad(
                lambda x: f(x) * float(self.density(x)), a, b, epsabs=1e-14, epsrel=1e-12, limit=400
            )
            total += val
        return total

    def excess(self) -> "Distribution":
        return ExcessLifetime(self)

    def discretize(self, n: int = DEFAULT_ATOMS) -> AtomicMeasure:
        """n equal-probability bins, one atom per bin at the bin's conditional mean.

        Total mass is 1 and the first moment equals the mean up to rounding.
        """
        if n < 1:
            raise InvalidInput("need at least one atom")
        u = np.arange(n + 1) / n
        q = self.quantile(u[:-1])
        # int_u^1 Q(s) ds = Q(u)(1 - u) + IT(Q(u))
        upper = q * (1.0 - u[:-1]) + self.integrated_tail(q)
        upper = np.append(upper, 0.0)
        locs = n * (upper[:-1] - upper[1:])
        locs = np.maximum(locs, q)  # guard against cancellation below the bin's left edge
        return AtomicMeasure(locs, np.full(n, 1.0 / n))

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "type")
        return f"{type(self).__name__}({params})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Distribution) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(repr(self))


class Exponential(Distribution):
    kind = "exponential"

    def __init__(self, rate: float):
        if not (math.isfinite(rate) and rate > 0):
            raise InvalidInput(f"exponential rate must be > 0, got {rate}")
        self._rate = float(rate)

    @property
    def mean(self):
        return 1.0 / self._rate

    @property
    def second_moment(self):
        return 2.0 / self._rate**2

    def tail(self, x):
        x = _as_array(x)
        return np.exp(-self._rate * np.maximum(x, 0.0))

    def density(self, x):
        x = _as_array(x)
        return np.where(x >= 0, self._rate * np.exp(-self._rate * np.maximum(x, 0.0)), 0.0)

    def integrated_tail(self, x):
        return self.tail(x) / self._rate

    def integrated_tail2(self, x):
        return self.tail(x) / self._rate**2

    def quantile(self, u):
        u = np.atleast_1d(_as_array(u))
        with np.errstate(divide="ignore"):
            return -np.log1p(-u) / self._rate

    def excess(self):
        return self

    def to_dict(self):
        return {"type": self.kind, "rate": self._rate}


class Deterministic(Distribution):
    kind = "deterministic"

    def __init__(self, value: float):
        if not (math.isfinite(value) and value > 0):
            raise InvalidInput(f"deterministic value must be > 0, got {value}")
        self.value = float(value)
        self.support_max = self.value

    @property
    def is_discrete(self):
        return True

    @property
    def mean(self):
        return self.value

    @property
    def second_moment(self):
        return self.value**2

    def tail(self, x):
        return (_as_array(x) < self.value).astype(float)

    def integrated_tail(self, x):
        return np.maximum(self.value - np.maximum(_as_array(x), 0.0), 0.0)

    def integrated_tail2(self, x):
        return 0.5 * self.integrated_tail(x) ** 2

    def quantile(self, u):
        u = np.atleast_1d(_as_array(u))
        return np.where(u > 0, self.value, 0.0)

    def sample(self, rng, size):
        _open_unit(rng, size)  # keep stream consumption identical across families
        return np.full(size, self.value)

    def expect(self, f):
        return float(f(self.value))

    def excess(self):
        return UniformInterval(0.0, self.value)

    def discretize(self, n=DEFAULT_ATOMS):
        return AtomicMeasure([self.value], [1.0])

    def to_dict(self):
        return {"type": self.kind, "value": self.value}


class UniformInterval(Distribution):
    """Uniform on [low, high]. low may be 0 (excess of a deterministic law)."""

    kind = "uniform"

    def __init__(self, low: float, high: float):
        if not (math.isfinite(low) and math.isfinite(high) and 0 <= low < high):
            raise InvalidInput(f"uniform needs 0 <= low < high, got ({low}, {high})")
        self.low, self.high = float(low), float(high)
        self.support_max = self.high
        self.breakpoints = (self.low,)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def second_moment(self):
        a, b = self.low, self.high
        return (a * a + a * b + b * b) / 3.0

    def tail(self, x):
        x = _as_array(x)
        return np.clip((self.high - x) / (self.high - self.low), 0.0, 1.0)

    def density(self, x):
        x = _as_array(x)
        return np.where((x >= self.low) & (x <= self.high), 1.0 / (self.high - self.low), 0.0)

    def integrated_tail(self, x):
        a, b = self.low, self.high
        x = np.maximum(_as_array(x), 0.0)
        inside = np.minimum(np.maximum(x, a), b)
        return np.maximum(a - x, 0.0) + (b - inside) ** 2 / (2.0 * (b - a))

    def integrated_tail2(self, x):
        a, b = self.low, self.high
        x = np.maximum(_as_array(x), 0.0)
        d = np.maximum(a - x, 0.0)
        inside = np.minimum(np.maximum(x, a), b)
        return d * d / 2.0 + d * (b - a) / 2.0 + (b - inside) ** 3 / (6.0 * (b - a))

    def quantile(self, u):
        u = np.atleast_1d(_as_array(u))
        return self.low + np.clip(u, 0.0, 1.0) * (self.high - self.low)

    def to_dict(self):
        return {"type": self.kind, "low": self.low, "high": self.high}


class HyperExponential(Distribution):
    kind = "hyperexponential"

    def __init__(self, weights: Sequence[float], rates: Sequence[float]):
        w = np.asarray(weights, dtype=float).reshape(-1)
        m = np.asarray(rates, dtype=float).reshape(-1)
        if w.shape != m.shape or w.size == 0:
            raise InvalidInput("hyperexponential needs equally many weights and rates")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"hyperexponential weights must be >= 0 and sum to 1, got {w.tolist()}")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise InvalidInput("hyperexponential rates must be > 0")
        self.weights, self.rates = w / w.sum(), m

    @property
    def mean(self):
        return float(np.sum(self.weights / self.rates))

    @property
    def second_moment(self):
        return float(np.sum(2.0 * self.weights / self.rates**2))

    def _mix(self, x, power: int):
        x = np.maximum(_as_array(x), 0.0)
        terms = np.exp(-np.multiply.outer(x, self.rates)) * (self.weights / self.rates**power)
        return terms.sum(axis=-1)

    def tail(self, x):
        return self._mix(x, 0)

    def density(self, x):
        x = _as_array(x)
        return np.where(x >= 0, self._mix(x, -1), 0.0)

    def integrated_tail(self, x):
        return self._mix(x, 1)

    def integrated_tail2(self, x):
        return self._mix(x, 2)

    def excess(self):
        w = self.weights / self.rates
        return HyperExponential(w / w.sum(), self.rates)

    def to_dict(self):
        return {"type": self.kind, "weights": self.weights.tolist(), "rates": self.rates.tolist()}


class EmpiricalAtoms(Distribution):
    kind = "empirical"

    def __init__(self, measure: AtomicMeasure):
        if measure.is_zero or abs(measure.total_mass - 1.0) > 1e-9:
            raise InvalidInput("empirical law must have total mass 1")
        if measure.locations[0] <= 0:
            raise InvalidInput("empirical law must not charge 0")
        self.measure = measure
        self.support_max = float(measure.locations[-1])

    @property
    def is_discrete(self):
        return True

    @property
    def mean(self):
        return self.measure.first_moment / self.measure.total_mass

    @property
    def second_moment(self):
        return float(self.measure.masses @ self.measure.locations**2)

    def _plus(self, x, power: int):
        x = _as_array(x)
        gap = np.maximum(np.subtract.outer(self.measure.locations, x), 0.0)
        if power == 0:
            vals = (np.subtract.outer(self.measure.locations, x) > 0).astype(float)
        else:
            vals = gap**power
        return np.tensordot(self.measure.masses, vals, axes=1)

    def tail(self, x):
        return self._plus(x, 0)

    def integrated_tail(self, x):
        return self._plus(np.maximum(_as_array(x), 0.0), 1)

    def integrated_tail2(self, x):
        return 0.5 * self._plus(np.maximum(_as_array(x), 0.0), 2)

    def quantile(self, u):
        u = np.atleast_1d(_as_array(u))
        cums = np.cumsum(self.measure.masses)
        idx = np.minimum(np.searchsorted(cums, u - 1e-15, side="left"), len(cums) - 1)
        return np.where(u > 0, self.measure.locations[idx], 0.0)

    def expect(self, f):
        from .measure import integrate as _integrate

        return _integrate(f, self.measure)

    def excess(self):
        return ExcessLifetime(self)

    def discretize(self, n=DEFAULT_ATOMS):
        return self.measure

    def to_dict(self):
        return {"type": self.kind, **self.measure.to_dict()}


class ExcessLifetime(Distribution):
    """Law with density mu * P(X > x): the stationary residual size of ``base``."""

    kind = "excess"

    def __init__(self, base: Distribution):
        self.base = base
        self.mu = 1.0 / base.mean
        self.support_max = base.support_max
        bps = set(base.breakpoints)
        if isinstance(base, EmpiricalAtoms):
            bps.update(base.measure.locations.tolist())
        self.breakpoints = tuple(sorted(bps))

    @property
    def mean(self):
        return 0.5 * self.mu * self.base.second_moment

    def tail(self, x):
        return self.mu * self.base.integrated_tail(np.maximum(_as_array(x), 0.0))

    def density(self, x):
        x = _as_array(x)
        return np.where(x >= 0, self.mu * self.base.tail(x), 0.0)

    def integrated_tail(self, x):
        return self.mu * self.base.integrated_tail2(x)

    def to_dict(self):
        return {"type": self.kind, "base": self.base.to_dict()}


FAMILIES = {
    "exponential": lambda d: Exponential(d["rate"]),
    "deterministic": lambda d: Deterministic(d["value"]),
    "uniform": lambda d: UniformInterval(d["low"], d["high"]),
    "hyperexponential": lambda d: HyperExponential(d["weights"], d["rates"]),
    "empirical": lambda d: EmpiricalAtoms(AtomicMeasure(d["locations"], d["masses"])),
    "excess": lambda d: ExcessLifetime(distribution_from_dict(d["base"])),
}


def distribution_from_dict(data: dict) -> Distribution:
    try:
        kind = data["type"]
    except (KeyError, TypeError):
        raise InvalidInput("distribution needs a 'type' field") from None
    if kind not in FAMILIES:
        raise InvalidInput(f"unknown distribution type {kind!r}")
    try:
        return FAMILIES[kind](data)
    except KeyError as exc:
        raise InvalidInput(f"{kind} distribution is missing parameter {exc.args[0]!r}") from None


def excess_lifetime(theta: Distribution) -> Distribution:
    """Excess-lifetime law of ``theta`` (density mu * tail)."""
    return theta.excess()


class DistStats(NamedTuple):
    mean: float
    tail: Callable
    sampler: Callable[[np.random.Generator, int], np.ndarray]


def dist_stats(theta: Distribution) -> DistStats:
    return DistStats(theta.mean, theta.tail, theta.sample)
