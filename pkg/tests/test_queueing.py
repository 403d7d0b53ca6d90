import math

import pytest
from hypothesis import assume, given, strategies as st

from colasim.queueing import (
    OVERLOADED,
    MmcQueue,
    UnstableQueueError,
    analytic_endpoint_latencies,
    analytic_mean_latency,
    erlang_b,
    erlang_c,
    erlang_c_naive,
    lq,
    prop1_bound,
    prop2_ratio,
    response_time,
    wq,
)
from colasim.topology import ClusterState, load_topology
from colasim.workload import Workload


def test_mm1_closed_form():
    q = MmcQueue(1, 0.6, 1.0)
    assert erlang_c(q) == pytest.approx(0.6)
    assert wq(q) == pytest.approx(0.6 / (1.0 - 0.6))


def test_mm2_closed_form():
    # C(2, a) = 2 rho^2 / (1 + rho)
    rho = 0.7
    q = MmcQueue(2, 2 * rho, 1.0)
    assert erlang_c(q) == pytest.approx(2 * rho**2 / (1 + rho))


def test_erlang_b_known_value():
    # B(2, 1) = (1/2) / (1 + 1 + 1/2)
    assert erlang_b(2, 1.0) == pytest.approx(0.2)


@given(st.integers(1, 60), st.floats(0.01, 0.99))
def test_recurrence_matches_factorial_form(c, rho):
    q = MmcQueue(c, rho * c * 2.0, 2.0)
    assert erlang_c(q) == pytest.approx(erlang_c_naive(q), rel=1e-9, abs=1e-300)


@given(st.integers(1, 50), st.floats(0.01, 0.99))
def test_probability_bounds_and_little(c, rho):
    q = MmcQueue(c, rho * c, 1.0)
    assert 0.0 <= erlang_c(q) <= 1.0
    assert lq(q) == pytest.approx(q.lam * wq(q))
    assert response_time(q) == pytest.approx(wq(q) + 1.0)


@given(st.integers(1, 40), st.floats(0.05, 0.95))
def test_wq_decreases_with_servers(c, rho):
    q = MmcQueue(c, rho * c, 1.0)
    assert wq(MmcQueue(c + 1, q.lam, 1.0)) <= wq(q)


@given(st.integers(1, 40), st.floats(0.0, 0.97), st.floats(0.001, 0.02))
def test_prop1_bound_monotone(c, rho, d):
    assume(rho + d < 1)
    assert prop1_bound(c, rho + d) > prop1_bound(c, rho)


def test_unstable_queue_raises():
    with pytest.raises(UnstableQueueError):
        wq(MmcQueue(2, 2.0, 1.0))
    with pytest.raises(ValueError):
        prop1_bound(2, 1.0)


def test_prop2_ratio():
    assert prop2_ratio(400, 600) == 1.5
    with pytest.raises(ValueError):
        prop2_ratio(600, 400)


def test_analytic_latency_overloaded_and_base_delay(sws):
    mu = sws.services[0].mu
    base = sws.endpoints[0].base_delay_ms
    w = Workload(0.5 * mu, (1.0,))
    lat = analytic_mean_latency(w, ClusterState((1,)), sws)
    assert lat == pytest.approx(base + 1000 * response_time(MmcQueue(1, 0.5 * mu, mu)))
    assert analytic_mean_latency(Workload(2 * mu, (1.0,)), ClusterState((1,)), sws) is OVERLOADED


def test_analytic_latency_sums_path(bookinfo):
    w = Workload(50.0, (1.0,))
    s = ClusterState((2, 2, 2, 2))
    (lat,) = analytic_endpoint_latencies(w, s, bookinfo)
    expect = bookinfo.endpoints[0].base_delay_ms + sum(
        1000 * response_time(MmcQueue(2, 50.0, svc.mu)) for svc in bookinfo.services
    )
    assert lat == pytest.approx(expect)
    assert math.isfinite(lat)
