import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bwshare.allocator import AlphaFairPolicy
from bwshare.topology import linear_network, validate_topology

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture
def single():
    return validate_topology([[1]], [1.0])


@pytest.fixture
def linear():
    return linear_network()


@pytest.fixture
def pf3():
    return AlphaFairPolicy.uniform(3, 1.0)


def random_instance(rng, max_routes=6, max_resources=6, zero_prob=0.25):
    """Random (topology, policy, z) with every route using at least one resource."""
    I = int(rng.integers(1, max_routes + 1))
    J = int(rng.integers(1, max_resources + 1))
    A = (rng.random((J, I)) < 0.5).astype(float)
    for i in range(I):
        if not A[:, i].any():
            A[rng.integers(J), i] = 1.0
    C = rng.uniform(0.2, 3.0, J)
    alpha = float(rng.choice([0.3, 0.5, 1.0, 1.0, 2.0, 3.0, rng.uniform(0.2, 4.0)]))
    kappa = rng.uniform(0.3, 3.0, I)
    z = rng.exponential(1.0, I) * 10.0 ** rng.uniform(-2, 2)
    z[rng.random(I) < zero_prob] = 0.0
    return validate_topology(A, C), AlphaFairPolicy(alpha, kappa), z
