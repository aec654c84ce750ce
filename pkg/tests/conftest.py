import numpy as np
import pytest

import acceptlog

from spdnn.merge import spdnn_merge
from spdnn.topology import fixtures


@pytest.fixture(scope="session")
def fixture_nets():
    return fixtures()


@pytest.fixture(scope="session")
def merged_80x264():
    return spdnn_merge(fixtures(80, 264))


@pytest.fixture(scope="session")
def merged_8x8():
    return spdnn_merge(fixtures(8, 8))[0]


@pytest.fixture(scope="session")
def merged_40x40():
    return spdnn_merge(fixtures(40, 40))[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if acceptlog.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptlog.LINES):
            terminalreporter.write_line(line)
