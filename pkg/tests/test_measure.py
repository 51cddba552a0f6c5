import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bwshare.errors import DimensionMismatch, InvalidInput, TooManyAtoms
from bwshare.measure import AtomicMeasure, integrate, levy_distance, prohorov_exact, shift_left, vector_distance


def random_measure(rng, max_atoms=6, dyadic=False):
    n = int(rng.integers(1, max_atoms + 1))
    if dyadic:
        locs = rng.integers(1, 64, n) / 8.0
        masses = rng.integers(1, 16, n) / 4.0
    else:
        locs = rng.uniform(0, 3, n)
        masses = rng.uniform(0.05, 2, n)
    return AtomicMeasure(locs, masses)


measures = st.integers(0, 2**32 - 1).map(lambda s: random_measure(np.random.default_rng(s)))
dyadic_measures = st.integers(0, 2**32 - 1).map(lambda s: random_measure(np.random.default_rng(s), dyadic=True))


def test_normalization():
    m = AtomicMeasure([3.0, 1.0, 1.0, 2.0], [1.0, 0.5, 0.25, 0.0])
    assert np.array_equal(m.locations, [1.0, 3.0])
    assert np.array_equal(m.masses, [0.75, 1.0])
    with pytest.raises(InvalidInput):
        AtomicMeasure([-1.0], [1.0])
    with pytest.raises(DimensionMismatch):
        AtomicMeasure([1.0, 2.0], [1.0])
    assert AtomicMeasure.from_dict(m.to_dict()) == m


def test_integrate_examples():
    xi = AtomicMeasure([2, 5], [1, 3])
    assert integrate(lambda x: np.ones_like(x), xi) == 4
    assert integrate(lambda x: x, xi) == 17
    assert integrate(lambda x: 1 / 0, AtomicMeasure.zero()) == 0


def test_shift_left_examples():
    assert shift_left(AtomicMeasure.dirac(3), 1) == AtomicMeasure.dirac(2)
    assert shift_left(AtomicMeasure([1, 3]), 1) == AtomicMeasure.dirac(2)
    xi = AtomicMeasure([0.5, 2.0], [1, 2])
    assert shift_left(xi, 0) == xi
    with pytest.raises(InvalidInput):
        shift_left(xi, -1)


@given(dyadic_measures, st.integers(0, 40), st.integers(0, 40))
def test_shift_semigroup_exact(xi, a, b):
    # dyadic locations and shifts make the floating-point subtraction exact
    a, b = a / 8.0, b / 8.0
    assert shift_left(shift_left(xi, a), b) == shift_left(xi, a + b)


def test_metric_hand_cases():
    d0, d3 = AtomicMeasure.dirac(0.0), AtomicMeasure.dirac(0.3)
    assert levy_distance(d0, d0) == 0
    assert prohorov_exact(d0, d0) == 0
    assert levy_distance(d0, d3) == pytest.approx(0.3, abs=1e-9)
    assert prohorov_exact(d0, d3) == pytest.approx(0.3, abs=1e-6)
    one, two = AtomicMeasure.dirac(1.0), AtomicMeasure.dirac(1.0, 2.0)
    assert prohorov_exact(one, two) == pytest.approx(1.0, abs=1e-6)
    assert 0 < levy_distance(one, two) <= 1.0
    assert levy_distance(AtomicMeasure.zero(), AtomicMeasure.zero()) == 0
    with pytest.raises(TooManyAtoms):
        prohorov_exact(AtomicMeasure(np.arange(13.0)), d0)


def test_vector_distance():
    a = [AtomicMeasure.dirac(1.0), AtomicMeasure.dirac(1.0)]
    b = [AtomicMeasure.dirac(1.1), AtomicMeasure.dirac(1.3)]
    assert vector_distance(a, a) == 0
    assert vector_distance(a, b) == pytest.approx(0.3, abs=1e-9)
    assert vector_distance(a[:1], b[:1]) == levy_distance(a[0], b[0])
    assert vector_distance(a, b, "prohorov") == pytest.approx(0.3, abs=1e-6)
    with pytest.raises(DimensionMismatch):
        vector_distance(a, b[:1])
    with pytest.raises(InvalidInput):
        vector_distance(a, b, "wasserstein")


def test_levy_below_prohorov_random():
    rng = np.random.default_rng(11)
    for _ in range(200):
        xi, zeta = random_measure(rng), random_measure(rng)
        assert levy_distance(xi, zeta) <= prohorov_exact(xi, zeta) + 1e-9


@pytest.mark.parametrize("metric", [levy_distance, prohorov_exact])
def test_metric_axioms(metric):
    rng = np.random.default_rng(5)
    for _ in range(200):
        x, y, z = (random_measure(rng) for _ in range(3))
        dxy, dyx = metric(x, y), metric(y, x)
        assert dxy >= 0 and metric(x, x) == 0
        assert abs(dxy - dyx) <= 1e-9
        assert dxy <= metric(x, z) + metric(z, y) + 1e-9


def _closed_set_mass(m, lo, hi):
    inside = np.zeros(len(m), dtype=bool)
    for l, h in zip(lo, hi):
        inside |= (m.locations >= l) & (m.locations <= h)
    return float(m.masses[inside].sum())


def _open_neighbourhood_mass(m, lo, hi, eps):
    near = np.zeros(len(m), dtype=bool)
    for l, h in zip(lo, hi):
        near |= (m.locations > l - eps) & (m.locations < h + eps)
    return float(m.masses[near].sum())


def test_prohorov_subsets_against_closed_intervals():
    # random closed sets (finite unions of closed intervals) never violate the
    # Prohorov condition at the distance found from atom subsets
    rng = np.random.default_rng(3)
    for _ in range(100):
        xi, zeta = random_measure(rng, 4), random_measure(rng, 4)
        eps = prohorov_exact(xi, zeta) + 1e-9
        for _ in range(200):
            k = int(rng.integers(1, 4))
            lo = rng.uniform(-0.5, 3.5, k)
            hi = lo + rng.exponential(0.4, k)
            for a, b in ((xi, zeta), (zeta, xi)):
                assert _closed_set_mass(a, lo, hi) <= _open_neighbourhood_mass(b, lo, hi, eps) + eps + 1e-12


@given(measures, st.floats(0.0, 4.0))
def test_uniform_integrability_probe(xi, x):
    M = float(xi.locations.max())
    tail = integrate(lambda y: y * (y >= x), xi)
    if x > M:
        assert tail == 0.0
