import numpy as np
import pytest

from trafficdbn.generator import build_ring3, ring3_network, ring3_theta


@pytest.fixture
def ring3():
    return ring3_network()


@pytest.fixture
def ring3_truth():
    return ring3_theta()


@pytest.fixture(scope="session")
def ring3_data():
    return build_ring3(seed=5, n_days=2, n_epochs=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
