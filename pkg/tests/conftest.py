import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_beta_states(rng, n=500, arms=4, high=30):
    alpha = rng.integers(1, high, (n, arms)).astype(float)
    beta = rng.integers(1, high, (n, arms)).astype(float)
    return alpha, beta


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
