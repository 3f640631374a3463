import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from metriplectic_fem.assembly import P1Space
from metriplectic_fem.mesh import build_icosphere, build_periodic_interval, build_torus_mesh

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by test_acceptance.py, printed in the summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def interval_space():
    return P1Space(build_periodic_interval(2 * np.pi, 16))


@pytest.fixture(scope="session")
def torus_space():
    return P1Space(build_torus_mesh(2 * np.pi, 2 * np.pi, 5, 5))


@pytest.fixture(scope="session")
def sphere_space():
    return P1Space(build_icosphere(1))
