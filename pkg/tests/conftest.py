import pytest
from hypothesis import settings

from gridreconf.feeders import bw33, tpc94

from helpers import six_node_dataset, six_node_grid

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def bw():
    return bw33()


@pytest.fixture(scope="session")
def tpc():
    return tpc94()


@pytest.fixture(scope="session")
def six():
    return six_node_grid()


@pytest.fixture(scope="session")
def six_data(six):
    return six_node_dataset(40, 11, six)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
