import numpy as np
import pytest

from proxtail.model import generate_logistic_dataset, logistic_objective, quadratic_objective


@pytest.fixture(scope="session")
def logistic_small():
    data = generate_logistic_dataset(20, 5, 3)
    return logistic_objective(data), data


@pytest.fixture(scope="session")
def logistic_desk():
    """The desk-scale logistic problem: M=100, n=10, ridge 1e-2 L."""
    data = generate_logistic_dataset(100, 10, 7)
    return logistic_objective(data), data


@pytest.fixture
def half_square():
    return quadratic_objective(np.eye(1))


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
