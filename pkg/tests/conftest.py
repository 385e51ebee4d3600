import pytest

from routebench.gateway import Gateway, load_simulator_profiles
from routebench.metrics import combo_metrics
from routebench.pool import load_pool
from routebench.profiles import MatrixConfig
from routebench.runner import run_matrix


@pytest.fixture(scope="session")
def pool():
    return load_pool()


@pytest.fixture(scope="session")
def sim_profiles():
    return load_simulator_profiles()


@pytest.fixture(scope="session")
def full_run(pool, sim_profiles):
    """One full simulated matrix at seed 0, shared by the heavier tests."""
    return run_matrix(MatrixConfig(), pool, Gateway.simulated(sim_profiles, 0), 0, workers=4)


@pytest.fixture(scope="session")
def full_run_combos(full_run):
    return [m.to_dict() for m in combo_metrics(full_run)]


_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(_ACCEPTANCE.items(), key=lambda kv: int(kv[0].split("_")[2])):
        terminalreporter.write_line(f"{verdict}  {name}")
