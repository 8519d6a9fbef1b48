import warnings

import pytest

from volterra_asym.fixtures import get_fixture

_CRITERIA: dict = {}


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="im_max heuristic")
    warnings.filterwarnings("ignore", message="delay equations have infinitely many roots")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


@pytest.fixture
def criterion():
    """Record (and print) one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def ex5():
    fx = get_fixture("example5")
    return fx, fx.spectral()


@pytest.fixture(scope="session")
def ex4():
    fx = get_fixture("example4")
    return fx, fx.spectral()
