import json

import pytest
from hypothesis import given, strategies as st

from colasim.topology import (
    BUNDLED,
    AppTopology,
    ClusterState,
    CostMode,
    CostModel,
    EndpointSpec,
    ServiceSpec,
    TopologyError,
    arrival_rates,
    cluster_cost,
    load_topology,
    utilizations,
)
from colasim.workload import Workload


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_topologies_load(name):
    topo = load_topology(name)
    assert topo.n_services >= 1
    assert AppTopology.from_dict(topo.to_dict()) == topo


def test_bundled_shapes():
    assert load_topology("sws").state_space_size() == 30
    assert load_topology("bookinfo4").n_services == 4
    assert load_topology("boutique11").n_services == 11


def test_load_from_path(tmp_path, sws):
    p = tmp_path / "t.json"
    p.write_text(json.dumps(sws.to_dict()))
    assert load_topology(p) == sws


def test_rejects_unknown_service_in_path():
    with pytest.raises(TopologyError, match="unknown"):
        AppTopology((ServiceSpec("a", 1.0, 3),), (EndpointSpec("e", ("a", "b")),))


def test_rejects_bad_replica_range():
    with pytest.raises(TopologyError):
        ServiceSpec("a", 1.0, max_replicas=2, min_replicas=3)
    with pytest.raises(TopologyError):
        ServiceSpec("a", 0.0, 3)


def test_validate_state(bookinfo):
    bookinfo.validate_state(bookinfo.min_state())
    with pytest.raises(TopologyError):
        bookinfo.validate_state(ClusterState((1, 1, 1)))
    with pytest.raises(TopologyError):
        bookinfo.validate_state(ClusterState((0, 1, 1, 1)))


def test_cluster_cost_vm_and_pod_modes(bookinfo):
    s = ClusterState((3, 1, 2, 1))
    assert cluster_cost(s, bookinfo, CostModel()) == 7 * 15
    assert cluster_cost(s, bookinfo, CostModel(CostMode.POD_COUNT, cost_per_unit=1.0)) == 7
    # two pods per VM, each service rounds up separately
    assert CostModel(pods_per_vm=2).vm_count(s) == 2 + 1 + 1 + 1


def test_arrival_rates_count_repeated_visits():
    topo = AppTopology(
        (ServiceSpec("a", 10.0, 5), ServiceSpec("b", 10.0, 5)),
        (EndpointSpec("x", ("a", "b", "a")), EndpointSpec("y", ("b",))),
    )
    assert arrival_rates(Workload(10.0, (0.5, 0.5)), topo) == [10.0, 10.0]


@given(st.lists(st.floats(-5, 50, allow_nan=False), min_size=4, max_size=4))
def test_clamp_always_valid(vals):
    topo = load_topology("bookinfo4")
    state = topo.clamp(vals)
    topo.validate_state(state)


@given(st.integers(1, 30), st.floats(0.0, 5000.0))
def test_utilization_is_rate_over_capacity(c, rps):
    topo = load_topology("sws")
    (u,) = utilizations(Workload(rps, (1.0,)), ClusterState((c,)), topo)
    assert u == pytest.approx(rps / (c * topo.services[0].mu))


@given(st.integers(1, 20), st.integers(1, 20))
def test_cost_monotone_in_replicas(a, b):
    topo = load_topology("sws")
    cm = CostModel()
    lo, hi = sorted((a, b))
    assert cluster_cost(ClusterState((lo,)), topo, cm) <= cluster_cost(ClusterState((hi,)), topo, cm)
