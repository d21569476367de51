import numpy as np
import pytest

from cpcs_attack.estimation import DetectorConfig, MitigationStrategy
from cpcs_attack.system_model import SystemModel, solve_riccati


@pytest.fixture(scope="session")
def scalar_model():
    return SystemModel.scalar()


@pytest.fixture(scope="session")
def scalar_ssk(scalar_model):
    return solve_riccati(scalar_model)


@pytest.fixture(scope="session")
def det10(scalar_ssk):
    return DetectorConfig.from_kalman(10.0, scalar_ssk)


@pytest.fixture(scope="session")
def perfect():
    return MitigationStrategy("perfect")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report -----------------------------------------------------------------

_REPORT = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the end-of-session acceptance summary."""

    def _record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_REPORT].append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
