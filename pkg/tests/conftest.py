import numpy as np
import pytest

from gofscreen.simgen import SimulationParams, sample_network
from gofscreen.rng import substream


@pytest.fixture(scope="session")
def params_low():
    return SimulationParams.for_lambda(1.0)


@pytest.fixture(scope="session")
def params_high():
    return SimulationParams.for_lambda(2.0)


@pytest.fixture(scope="session")
def network(params_low):
    return sample_network(params_low, substream(11, 0, "network"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for key, (ok, detail) in sorted(report.items(), key=lambda kv: mod._order(kv[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
