import os

import pytest

from pabest.topology import Topology

ACCEPTANCE: list[tuple[int, str, str, str]] = []


def pytest_addoption(parser):
    parser.addoption("--run-network", action="store_true", default=False,
                     help="run tests that open loopback UDP/TCP sockets")


def network_enabled(config) -> bool:
    return config.getoption("--run-network") or os.environ.get("PAB_NETWORK") == "1"


def pytest_collection_modifyitems(config, items):
    if network_enabled(config):
        return
    skip = pytest.mark.skip(reason="networked test; opt in with --run-network or PAB_NETWORK=1")
    for item in items:
        if "network" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, status, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2} {status:<7} {name}: {detail}")


@pytest.fixture
def two_path() -> Topology:
    """Three links, two paths sharing the middle link."""
    return Topology.from_link_lists(["l1", "l2", "l3"], {"p1": ["l1", "l2"], "p2": ["l2", "l3"]})
