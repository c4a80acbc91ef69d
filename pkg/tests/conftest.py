import numpy as np
import pytest

from fdrsafe.simulation import ScenarioSpec, gen_symmetric

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def symmetric_data():
    return gen_symmetric(ScenarioSpec("symmetric", I=1000), seed=20240611)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
