"""Shared fixtures and the per-criterion summary printed after the acceptance suite."""

import pytest

from colasim.topology import AppTopology, EndpointSpec, ServiceSpec, load_topology

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        prev = _criteria.get(n, (title, "PASS"))[1]
        status = "FAIL" if rep.failed or prev == "FAIL" else "PASS"
        _criteria[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, status = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} [{status}] {title}")


def single_queue(mu: float = 1.0, max_replicas: int = 64, base_delay_ms: float = 0.0) -> AppTopology:
    return AppTopology(
        (ServiceSpec("q", mu, max_replicas),), (EndpointSpec("e", ("q",), base_delay_ms),), name="mmc"
    )


@pytest.fixture
def sws():
    return load_topology("sws")


@pytest.fixture
def bookinfo():
    return load_topology("bookinfo4")


@pytest.fixture
def boutique():
    return load_topology("boutique11")
