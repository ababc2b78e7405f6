import numpy as np
import pytest

from sscalib import toy_models
from sscalib.inference import CalibrationProblem, static_params


@pytest.fixture(scope="session")
def toy3():
    return toy_models.load_shipped("toy3")


@pytest.fixture(scope="session")
def toy3_static(toy3):
    return static_params(toy3.layout, toy3.truth)


@pytest.fixture
def toy3_problem(toy3):
    return CalibrationProblem(toy3.model, toy3.observations, toy3.run_config.prior_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report -------------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
