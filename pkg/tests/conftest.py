import pytest

from quadheat import Grid, PotentialProfile, find_equilibria

ACCEPTANCE_LINES = []


def _solve(c):
    return find_equilibria(PotentialProfile.gaussian_quadratic(c))


@pytest.fixture(scope="session")
def grid():
    return Grid()


@pytest.fixture(scope="session")
def eq_m12():
    return _solve(-1.2)


@pytest.fixture(scope="session")
def eq_0():
    return _solve(0.0)


@pytest.fixture(scope="session")
def eq_04():
    return _solve(0.4)


@pytest.fixture(scope="session")
def eq_006():
    return _solve(0.06)


@pytest.fixture(scope="session")
def diagram():
    from quadheat.bifurcation import bifurcation_diagram

    return bifurcation_diagram(branches=("upper", "symmetric", "fork+", "fork-"))


@pytest.fixture(scope="session")
def record():
    """``record(label, ok, detail)`` logs one acceptance line and returns ``ok``."""

    def _record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
