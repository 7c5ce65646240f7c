import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pslambda.benchmarks import example1_system, tier_b, tier_b_extended
from pslambda.poincare import PoincareMap, find_fixed_point

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ex1():
    return example1_system()


@pytest.fixture(scope="session")
def tb():
    return tier_b()


@pytest.fixture(scope="session")
def tb_ext():
    return tier_b_extended(0.05)


@pytest.fixture(scope="session")
def tb_map(tb_ext):
    return PoincareMap(tb_ext, 0.0)


@pytest.fixture(scope="session")
def tb_saddle(tb_map):
    return find_fixed_point(tb_map, [0.0, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
