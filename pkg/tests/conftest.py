import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seedplan.dataset import GeneratorConfig, generate_synthetic

settings.register_profile(
    "seedplan", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("seedplan")


def small_config(**overrides):
    base = dict(
        n_sites=15,
        samples_per_variety=(40, 40, 40, 12),
        variety_groups=(0, 0, 1, 1),
    )
    base.update(overrides)
    return GeneratorConfig.standard(**base)


@pytest.fixture(scope="session")
def small_data():
    d, truth = generate_synthetic(small_config(), seed=3)
    return d, truth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
