import sys

import pytest
from hypothesis import HealthCheck, settings

from orbita.problem import Workspace

settings.register_profile(
    "orbita", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile("orbita")


@pytest.fixture(scope="session")
def se2():
    return Workspace.bundled("se2")


@pytest.fixture(scope="session")
def r3():
    return Workspace.bundled("r3")


def pytest_terminal_summary(terminalreporter):
    test_acceptance = sys.modules.get("tests.test_acceptance")
    if test_acceptance is not None and test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.summary_lines():
            terminalreporter.write_line(line)
