"""Experiments: train, evaluate policies head to head, exhaustive search, training-cost accounting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from colasim.autoscalers import (
    HpaConfig,
    HpaPolicy,
    LinRegPolicy,
    RewardParams,
    lr_train,
    random_states,
    reward,
)
from colasim.controller import ColaController, ControllerConfig
from colasim.evaluation import EvaluationTrace, Policy, TickObservation, derive_seed, run_schedule
from colasim.simulator import SimConfig, simulate
from colasim.topology import AppTopology, ClusterState, CostModel, cluster_cost, load_topology
from colasim.trainer import SimSampler, TrainedPolicy, TrainerConfig, train
from colasim.workload import Workload, WorkloadGrid, WorkloadSchedule, uniform

log = logging.getLogger(__name__)

CSV_HEADER = ["users", "policy", "median_ms", "p90_ms", "failures_per_s", "cost_units", "samples"]


class ExperimentError(ValueError):
    pass


class StateSpaceTooLarge(ExperimentError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"state space has {size} states, exceeding the cap of {cap}")
        self.size = size
        self.cap = cap


# -- exhaustive search -----------------------------------------------------


@dataclass(frozen=True)
class OracleEntry:
    state: ClusterState
    reward: float
    latency_ms: float
    cost: float


def enumerate_states(topo: AppTopology):
    ranges = [range(s.min_replicas, s.max_replicas + 1) for s in topo.services]
    for combo in np.ndindex(*[len(r) for r in ranges]):
        yield ClusterState(tuple(r[k] for r, k in zip(ranges, combo)))


def exhaustive_oracle(
    workload,
    topo: AppTopology,
    cm: CostModel,
    params: RewardParams,
    sim_cfg: SimConfig,
    cap: int = 100_000,
    sampler=None,
) -> list[OracleEntry]:
    """Evaluate every cluster state and rank by reward (ties: cheaper, then lexicographic).

    Every state is simulated with the same seed so the ranking compares states
    under identical arrival and service draws. ``sampler`` overrides the DES.
    """
    size = topo.state_space_size()
    if size > cap:
        raise StateSpaceTooLarge(size, cap)
    objective = params.objective.value
    out = []
    for state in enumerate_states(topo):
        if sampler is not None:
            report = sampler(workload, state)
        else:
            report = simulate(workload, state, topo, cm, sim_cfg)
        lat = report.latency(objective)
        out.append(OracleEntry(state, reward(params, lat, state, topo), lat, cluster_cost(state, topo, cm)))
    out.sort(key=lambda e: (-e.reward, e.cost, e.state.replicas))
    return out


def oracle_reward(cfg: TrainerConfig) -> RewardParams:
    """Reward used to rank oracle states: the trainer's final, most latency-averse weight."""
    return cfg.reward.with_lambda(cfg.lambda_max)


# -- training cost ---------------------------------------------------------


@dataclass(frozen=True)
class TrainingCostReport:
    total_samples: int
    simulated_s: float
    cost_unit_hours: float


def training_cost_report(policy: TrainedPolicy, sim_cfg: SimConfig) -> TrainingCostReport:
    samples = sum(e.samples for e in policy.entries.values())
    trial_cost = sum(e.trial_cost for e in policy.entries.values())
    return TrainingCostReport(
        samples, samples * sim_cfg.duration_s, trial_cost * sim_cfg.duration_s / 3600.0
    )


def amortization(report: TrainingCostReport, baseline_cost_rate: float, cola_cost_rate: float) -> float | None:
    """Hours of deployment needed to pay back training; None means never."""
    savings = baseline_cost_rate - cola_cost_rate
    if report.cost_unit_hours == 0:
        return 0.0
    if savings <= 0:
        return None
    return report.cost_unit_hours / savings


# -- experiment spec ---------------------------------------------------------


@dataclass
class ExperimentSpec:
    topology: str
    policies: list[str]
    schedule: WorkloadSchedule
    grid: WorkloadGrid | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    cost_model: CostModel = field(default_factory=CostModel)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    output: str | None = None
    seed: int = 0
    settle_s: float = 0.0
    policy_file: str | None = None
    lr_samples: int = 200
    lr_candidates: int = 20000

    def __post_init__(self) -> None:
        if not self.policies:
            raise ExperimentError("experiment needs at least one policy")
        for p in self.policies:
            parse_policy(p)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentSpec:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ExperimentError(f"{path}:{exc.lineno}: {exc.msg}") from None
        base = path.parent
        try:
            return cls.from_dict(doc, base)
        except (KeyError, TypeError, ValueError) as exc:
            raise ExperimentError(f"{path}: {exc}") from None

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path(".")) -> ExperimentSpec:
        topo = doc["topology"]
        if not Path(topo).is_absolute() and (base / topo).exists():
            topo = str(base / topo)
        sched = doc.get("schedule", {"segments": []})
        if isinstance(sched, str):
            sched = json.loads((base / sched).read_text())
        cm = CostModel.from_dict(doc.get("cost_model", {}))
        trainer = doc.get("trainer")
        reward_doc = doc.get("reward")
        tcfg = TrainerConfig.from_dict(trainer) if trainer else TrainerConfig()
        if reward_doc:
            rd = dict(reward_doc)
            rd.setdefault("cost_model", cm.to_dict())
            rd.setdefault("lambda_weight", 1.0 / 3.0)
            tcfg = TrainerConfig(**{**tcfg.__dict__, "reward": RewardParams.from_dict(rd)})
        ctrl = doc.get("controller", {})
        fb = ctrl.pop("fallback_hpa", None) if ctrl else None
        ccfg = ControllerConfig(**ctrl, **({"fallback_hpa": HpaConfig(**fb)} if fb else {}))
        return cls(
            topology=topo,
            policies=list(doc["policies"]),
            schedule=WorkloadSchedule.from_dict(sched),
            grid=WorkloadGrid.from_dict(doc["grid"]) if doc.get("grid") else None,
            sim=SimConfig.from_dict(doc.get("sim", {})),
            cost_model=cm,
            trainer=tcfg,
            controller=ccfg,
            output=doc.get("output"),
            seed=int(doc.get("seed", 0)),
            settle_s=float(doc.get("settle_s", 0.0)),
            policy_file=doc.get("policy_file"),
            lr_samples=int(doc.get("lr_samples", 200)),
            lr_candidates=int(doc.get("lr_candidates", 20000)),
        )


def parse_policy(text: str) -> tuple[str, float | None]:
    t = text.strip().lower()
    if t in ("cola", "lr", "oracle"):
        return t, None
    if t.startswith("cpu:") or t.startswith("cpu-"):
        v = float(t[4:])
        if v > 1:
            v /= 100.0
        if not 0 < v <= 1:
            raise ExperimentError(f"bad CPU threshold in policy {text!r}")
        return "cpu", v
    raise ExperimentError(f"unknown policy {text!r} (expected cola, cpu:<T>, lr or oracle)")


@dataclass(frozen=True)
class ResultRow:
    users: float
    policy: str
    median_ms: float
    p90_ms: float
    failures_per_s: float
    cost_units: float
    samples: int

    def csv_fields(self) -> list[str]:
        return [
            f"{self.users:g}",
            self.policy,
            f"{self.median_ms:.3f}",
            f"{self.p90_ms:.3f}",
            f"{self.failures_per_s:.4f}",
            f"{self.cost_units:.4f}",
            str(self.samples),
        ]


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


class StaticPolicy(Policy):
    """Holds a per-segment state fixed (used to replay oracle optima)."""

    def __init__(self, name: str, states: Sequence[ClusterState], durations: Sequence[float]):
        self.name = name
        self._states = list(states)
        self._bounds = list(np.cumsum(durations))
        self.tick_s = 15.0

    def initial_state(self, topo: AppTopology) -> ClusterState:
        return self._states[0]

    def observe(self, obs: TickObservation, current: ClusterState) -> ClusterState:
        for bound, state in zip(self._bounds, self._states):
            if obs.time_s < bound - 1e-9:
                return state
        return self._states[-1]


def default_grid(spec: ExperimentSpec, topo: AppTopology) -> WorkloadGrid:
    rates = [s.workload.total_rps for s in spec.schedule.segments] or [100.0]
    lo, hi = min(rates), max(rates)
    step = max((hi - lo) / 4, 1.0)
    return WorkloadGrid(lo, max(hi, lo), step, (uniform(topo.n_endpoints),))


def train_cola(spec: ExperimentSpec, topo: AppTopology) -> TrainedPolicy:
    grid = spec.grid or default_grid(spec, topo)
    sampler = SimSampler(topo, spec.cost_model, spec.sim.with_seed(derive_seed(spec.seed, 101)))
    return train(grid, spec.trainer, topo, sampler)


def train_lr(spec: ExperimentSpec, topo: AppTopology):
    grid = spec.grid or default_grid(spec, topo)
    rng = np.random.default_rng(derive_seed(spec.seed, 202))
    rps_values = grid.rps_values()
    states = random_states(topo, spec.lr_samples, rng)
    params = spec.trainer.reward
    samples = []
    for k, row in enumerate(states):
        state = ClusterState(tuple(int(v) for v in row))
        rps = rps_values[int(rng.integers(len(rps_values)))]
        dist = grid.distributions[int(rng.integers(len(grid.distributions)))]
        w = Workload(rps, dist)
        rep = simulate(w, state, topo, spec.cost_model, spec.sim.with_seed(derive_seed(spec.seed, 203, k)))
        samples.append((w, state, reward(params, rep.latency(params.objective.value), state, topo)))
    return lr_train(samples, topo)


def _evaluate_policy(spec: ExperimentSpec, topo: AppTopology, name: str, arg, cola_policy, lr_model):
    sim = spec.sim.with_seed(derive_seed(spec.seed, 1))
    if name == "cpu":
        pol = HpaPolicy(HpaConfig(threshold=arg), topo)
        samples = 0
    elif name == "cola":
        pol = ColaController(spec.controller, cola_policy, topo, spec.cost_model)
        samples = cola_policy.total_samples
    elif name == "lr":
        pol = LinRegPolicy(lr_model, topo, spec.cost_model, seed=derive_seed(spec.seed, 204))
        samples = lr_model.n_samples
    else:
        states = []
        for k, seg in enumerate(spec.schedule.segments):
            ranked = exhaustive_oracle(
                seg.workload, topo, spec.cost_model, oracle_reward(spec.trainer),
                spec.sim.with_seed(derive_seed(spec.seed, 303, k)),
            )
            states.append(ranked[0].state)
        pol = StaticPolicy("oracle", states, [s.duration_s for s in spec.schedule.segments])
        samples = topo.state_space_size() * len(spec.schedule.segments)
    trace = run_schedule(pol, spec.schedule, topo, spec.cost_model, sim, spec.settle_s)
    return trace, samples


def trace_rows(trace: EvaluationTrace, samples: int) -> list[ResultRow]:
    return [
        ResultRow(
            users=seg.workload.total_rps,
            policy=trace.policy,
            median_ms=seg.report.median_ms,
            p90_ms=seg.report.p90_ms,
            failures_per_s=seg.report.failures_per_s,
            cost_units=seg.report.cost_units,
            samples=samples,
        )
        for seg in trace.segments
    ]


def run_experiment(spec: ExperimentSpec, write: bool = True) -> tuple[list[ResultRow], dict[str, EvaluationTrace]]:
    """Train what is needed, evaluate every policy on the schedule with paired seeds, write the CSV."""
    topo = load_topology(spec.topology)
    parsed = [parse_policy(p) for p in spec.policies]
    names = [n for n, _ in parsed]
    cola_policy = None
    lr_model = None
    if "cola" in names and spec.schedule.segments:
        cache = Path(spec.policy_file) if spec.policy_file else None
        if cache is not None and cache.exists():
            cola_policy = TrainedPolicy.load(cache)
            cola_policy.validate(topo)
        else:
            log.info("training COLA policy")
            cola_policy = train_cola(spec, topo)
            if cache is not None:
                cola_policy.save(cache)
    if "lr" in names and spec.schedule.segments:
        lr_model = train_lr(spec, topo)

    per_policy: list[list[ResultRow]] = []
    traces: dict[str, EvaluationTrace] = {}
    for name, arg in parsed:
        if not spec.schedule.segments:
            break
        trace, samples = _evaluate_policy(spec, topo, name, arg, cola_policy, lr_model)
        traces[trace.policy] = trace
        per_policy.append(trace_rows(trace, samples))
    # segment-major, policies in spec order
    rows = [r for seg_rows in zip(*per_policy) for r in seg_rows]
    if write and spec.output:
        Path(spec.output).write_text(rows_to_csv(rows))
    return rows, traces


def time_averaged_cost(trace: EvaluationTrace, topo: AppTopology, cm: CostModel, segment: int) -> float:
    """Recompute a segment's cost from the logged state history."""
    windows = [(length, state) for idx, _, length, state in trace.history if idx == segment]
    total = sum(length for length, _ in windows)
    return sum(cluster_cost(s, topo, cm) * length for length, s in windows) / total
