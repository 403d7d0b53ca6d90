import warnings

import pytest
from hypothesis import given, strategies as st

from colasim.workload import (
    Workload,
    WorkloadError,
    WorkloadGrid,
    WorkloadSchedule,
    alternating,
    constant_rate,
    diurnal,
    grid_points,
    is_unimodal,
    max_adjacent_ratio,
    perturb_distribution,
    uniform,
)

probs = st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6).map(lambda v: tuple(x / sum(v) for x in v))


def test_probabilities_must_sum_to_one():
    with pytest.raises(WorkloadError):
        Workload(10.0, (0.5, 0.4))
    with pytest.raises(WorkloadError):
        Workload(-1.0, (1.0,))


@given(st.floats(0.1, 1e4), probs)
def test_context_round_trip(rps, p):
    w = Workload(rps, p)
    back = Workload.from_context(w.context())
    assert back.total_rps == pytest.approx(rps)
    assert back.endpoint_probs == pytest.approx(p)


def test_grid_points_order():
    g = WorkloadGrid(100, 300, 100, ((1.0, 0.0), (0.5, 0.5)))
    pts = grid_points(g)
    assert [w.total_rps for w in pts] == [100, 200, 300, 100, 200, 300]
    assert pts[3].endpoint_probs == (0.5, 0.5)
    assert max_adjacent_ratio(g) == 2.0


@given(st.floats(1, 500), st.floats(1, 100), st.integers(1, 20))
def test_grid_values_within_bounds(lo, step, n):
    g = WorkloadGrid(lo, lo + step * n, step, ((1.0,),))
    vals = g.rps_values()
    assert len(vals) == n + 1
    assert all(lo - 1e-9 <= v <= g.rps_upper + 1e-6 for v in vals)


def test_diurnal_warns_when_not_unimodal():
    assert is_unimodal([1, 3, 5, 4, 2])
    assert not is_unimodal([1, 5, 2, 6])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        diurnal([1, 5, 2, 6], (1.0,), 60)
    assert caught


def test_alternating_is_seeded_and_in_range():
    a = alternating((400, 500), (50, 100), 3, 60, seed=4)
    assert a == alternating((400, 500), (50, 100), 3, 60, seed=4)
    rates = [s.workload.total_rps for s in a.segments]
    assert all(50 <= r <= 100 for r in rates[0::2])
    assert all(400 <= r <= 500 for r in rates[1::2])


def test_schedule_save_load(tmp_path):
    s = constant_rate(100, (0.25, 0.75), 60) + constant_rate(200, (0.5, 0.5), 30)
    p = tmp_path / "s.json"
    s.save(p)
    assert WorkloadSchedule.load(p) == s
    assert s.total_duration_s == 90


@given(probs, st.floats(0.1, 5.0))
def test_perturbation_stays_a_distribution(p, factor):
    q = perturb_distribution(p, factor, 0)
    assert sum(q) == pytest.approx(1.0)
    assert all(v >= 0 for v in q)


def test_uniform():
    assert uniform(4) == (0.25,) * 4
