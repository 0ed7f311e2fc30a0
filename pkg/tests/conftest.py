import sys

import pytest

from shp.core import ChannelConfig
from shp.trace import generate_synthetic_trace


@pytest.fixture(scope="session")
def trace60():
    return generate_synthetic_trace(120, 60, seed=11)


@pytest.fixture
def cfg():
    return ChannelConfig()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
