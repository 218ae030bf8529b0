import numpy as np
import pytest

from instances import one_dim_fixture, opposing_pair


@pytest.fixture
def line_problem():
    return one_dim_fixture()


@pytest.fixture
def opposing():
    return opposing_pair()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def verdicts():
    """Criterion number -> (passed, detail); echoed in the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        passed, detail = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
