import json

import pytest

from colasim.cli import main as cli_main
from colasim.harness import (
    CSV_HEADER,
    ExperimentError,
    ExperimentSpec,
    StateSpaceTooLarge,
    TrainingCostReport,
    amortization,
    exhaustive_oracle,
    parse_policy,
    rows_to_csv,
    run_experiment,
    time_averaged_cost,
    training_cost_report,
)
from colasim.autoscalers import RewardParams
from colasim.simulator import SimConfig
from colasim.topology import AppTopology, ClusterState, CostModel, EndpointSpec, ServiceSpec
from colasim.trainer import AnalyticSampler, PolicyEntry, TrainedPolicy
from colasim.workload import Workload, WorkloadGrid, WorkloadSchedule, constant_rate


def test_parse_policy():
    assert parse_policy("cola") == ("cola", None)
    assert parse_policy("cpu:0.3") == ("cpu", 0.3)
    assert parse_policy("CPU-70") == ("cpu", 0.7)
    with pytest.raises(ExperimentError):
        parse_policy("random")
    with pytest.raises(ExperimentError):
        parse_policy("cpu:0")


def test_oracle_enumerates_sws(sws):
    cm = CostModel()
    sampler = AnalyticSampler(sws, cm)
    ranked = exhaustive_oracle(Workload(400.0, (1.0,)), sws, cm, RewardParams(55.0, 200.0), SimConfig(),
                               sampler=sampler)
    assert len(ranked) == 30 and sampler.calls == 30
    assert all(a.reward >= b.reward for a, b in zip(ranked, ranked[1:]))
    # the top state is the cheapest one meeting the target
    meeting = [e for e in ranked if e.latency_ms <= 55.0]
    assert ranked[0].state == min(meeting, key=lambda e: e.cost).state


def test_oracle_cap():
    big = AppTopology(tuple(ServiceSpec(f"s{i}", 10.0, 3) for i in range(64)), (EndpointSpec("e", ("s0",)),))
    with pytest.raises(StateSpaceTooLarge) as info:
        exhaustive_oracle(Workload(1.0, (1.0,)), big, CostModel(), RewardParams(), SimConfig())
    assert info.value.size == 3**64
    assert str(3**64) in str(info.value)


def _policy_with_samples(samples, trial_cost):
    grid = WorkloadGrid(100, 100, 1, ((1.0,),))
    e = PolicyEntry(0, 100.0, ClusterState((5,)), 40.0, samples, True, trial_cost)
    return TrainedPolicy(grid, RewardParams(), {(0, 100.0): e})


def test_training_cost_arithmetic():
    rep = training_cost_report(_policy_with_samples(10, 10 * 5.0), SimConfig(30.0))
    assert rep.total_samples == 10
    assert rep.simulated_s == 300.0
    assert rep.cost_unit_hours == pytest.approx(5 * 300 / 3600)
    empty = TrainedPolicy(WorkloadGrid(1, 1, 1, ((1.0,),)), RewardParams(), {})
    assert training_cost_report(empty, SimConfig()) == TrainingCostReport(0, 0.0, 0.0)


def test_amortization():
    assert amortization(TrainingCostReport(0, 0, 58.0), 10.0, 7.0) == pytest.approx(19.33, abs=0.01)
    assert amortization(TrainingCostReport(0, 0, 58.0), 7.0, 7.0) is None
    assert amortization(TrainingCostReport(0, 0, 0.0), 7.0, 7.0) == 0.0


def test_empty_schedule_gives_header_only(tmp_path):
    out = tmp_path / "o.csv"
    spec = ExperimentSpec("sws", ["cola", "cpu:50"], WorkloadSchedule(()), output=str(out))
    rows, _ = run_experiment(spec)
    assert rows == []
    assert out.read_text() == ",".join(CSV_HEADER) + "\n"


def test_rows_match_state_history(tmp_path):
    spec = ExperimentSpec(
        "bookinfo4",
        ["cpu:30", "cpu:70"],
        constant_rate(150.0, (1.0,), 240.0) + constant_rate(250.0, (1.0,), 240.0),
        seed=4,
        settle_s=120.0,
    )
    rows, traces = run_experiment(spec, write=False)
    assert [r.policy for r in rows] == ["CPU-30", "CPU-70", "CPU-30", "CPU-70"]
    from colasim.topology import load_topology

    topo = load_topology("bookinfo4")
    for row, (name, seg) in zip(rows, [("CPU-30", 0), ("CPU-70", 0), ("CPU-30", 1), ("CPU-70", 1)]):
        assert row.cost_units == pytest.approx(time_averaged_cost(traces[name], topo, spec.cost_model, seg))
    # lower threshold: at least as costly and no slower
    for seg in (0, 2):
        assert rows[seg].cost_units >= rows[seg + 1].cost_units
        assert rows[seg].median_ms <= rows[seg + 1].median_ms


def test_spec_load_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "topology": "sws",\n  "policies": [cola]\n}\n')
    with pytest.raises(ExperimentError, match=r"bad.json:3"):
        ExperimentSpec.load(p)


def test_spec_needs_a_policy():
    with pytest.raises(ExperimentError):
        ExperimentSpec("sws", [], WorkloadSchedule(()))


def test_spec_file_round_trip(tmp_path):
    doc = {
        "topology": "sws",
        "policies": ["cpu:50", "oracle"],
        "schedule": {"segments": [{"rps": 300, "probs": [1.0], "duration_s": 60}]},
        "sim": {"duration_s": 20.0, "seed": 3},
        "reward": {"l_target_ms": 50},
        "seed": 8,
        "output": str(tmp_path / "out.csv"),
    }
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(doc))
    assert cli_main(["evaluate", "--spec", str(p)]) == 0
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert [l.split(",")[1] for l in lines[1:]] == ["CPU-50", "oracle"]
    assert lines[2].split(",")[-1] == "30"


def test_cli_train_oracle_report(tmp_path, capsys):
    pol = tmp_path / "p.json"
    assert cli_main(["train", "--topology", "sws", "--grid", "100:200:100", "--duration-s", "10",
                     "--out", str(pol)]) == 0
    TrainedPolicy.load(pol)
    assert cli_main(["oracle", "--topology", "sws", "--rps", "200", "--duration-s", "10", "--top", "3"]) == 0
    out = capsys.readouterr().out
    assert "rank,replicas,reward,latency_ms,cost" in out
    assert cli_main(["report", "--policy-file", str(pol), "--baseline-rate", "100", "--cola-rate", "100"]) == 0
    assert "break_even_hours: never" in capsys.readouterr().out


def test_cli_errors_are_reported(capsys):
    assert cli_main(["evaluate", "--topology", "sws"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli_main(["train", "--grid", "1:2"])
