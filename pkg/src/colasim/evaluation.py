"""Time-stepped evaluation loop shared by every autoscaling policy.

A schedule is cut into fixed ticks; each tick is simulated as an independent
sample window at the state the policy holds at that moment. Window seeds depend
only on (master seed, segment, tick), so different policies see the same
arrival process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from colasim.simulator import SegmentAccumulator, SimConfig, SimReport, simulate_with_samples
from colasim.topology import AppTopology, ClusterState, CostModel
from colasim.workload import Segment, Workload, WorkloadSchedule


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TickObservation:
    """What a policy sees at the end of a tick."""

    time_s: float
    duration_s: float
    workload: Workload  # true workload during the tick
    report: SimReport
    observed_rps: float
    observed_probs: tuple[float, ...]


@dataclass
class SegmentResult:
    index: int
    workload: Workload
    duration_s: float
    report: SimReport
    states: list[tuple[float, ClusterState]]


@dataclass
class EvaluationTrace:
    policy: str
    segments: list[SegmentResult] = field(default_factory=list)
    # (segment index, start time, window length, state) for every recorded window
    history: list[tuple[int, float, float, ClusterState]] = field(default_factory=list)


class Policy:
    """Decides the state for the next tick from the latest observation."""

    name = "policy"
    tick_s = 15.0

    def initial_state(self, topo: AppTopology) -> ClusterState:
        return topo.min_state()

    def observe(self, obs: TickObservation, current: ClusterState) -> ClusterState:
        raise NotImplementedError


def run_schedule(
    policy: Policy,
    schedule: WorkloadSchedule,
    topo: AppTopology,
    cm: CostModel,
    sim_cfg: SimConfig,
    settle_s: float = 0.0,
    initial_state: ClusterState | None = None,
    on_tick: Callable[[float, ClusterState], None] | None = None,
) -> EvaluationTrace:
    """Drive ``policy`` through ``schedule``; ``settle_s`` of the first workload runs unrecorded first."""
    trace = EvaluationTrace(policy=policy.name)
    state = initial_state or policy.initial_state(topo)
    topo.validate_state(state)
    segments: list[tuple[int, Segment]] = []
    if settle_s > 0 and schedule.segments:
        segments.append((-1, Segment(schedule.segments[0].workload, settle_s)))
    segments.extend(enumerate(schedule.segments))

    clock = 0.0
    tick = policy.tick_s
    for seg_idx, seg in segments:
        acc = SegmentAccumulator()
        states: list[tuple[float, ClusterState]] = [(clock, state)]
        n_ticks = max(1, math.ceil(seg.duration_s / tick - 1e-9))
        for k in range(n_ticks):
            length = min(tick, seg.duration_s - k * tick)
            cfg = SimConfig(
                duration_s=length,
                timeout_ms=sim_cfg.timeout_ms,
                seed=derive_seed(sim_cfg.seed, seg_idx + 1, k),
                warmup_s=None,
                noise_sd_ms=sim_cfg.noise_sd_ms,
            )
            report, samples = simulate_with_samples(seg.workload, state, topo, cm, cfg)
            if seg_idx >= 0:
                acc.add(report, samples, length)
                trace.history.append((seg_idx, clock, length, state))
            counts = report.endpoint_arrivals
            total = sum(counts)
            obs = TickObservation(
                time_s=clock + length,
                duration_s=length,
                workload=seg.workload,
                report=report,
                observed_rps=total / length,
                observed_probs=tuple(c / total for c in counts) if total else seg.workload.endpoint_probs,
            )
            clock += length
            new_state = policy.observe(obs, state)
            topo.validate_state(new_state)
            if new_state != state and seg_idx >= 0:
                states.append((clock, new_state))
            state = new_state
            if on_tick is not None:
                on_tick(clock, state)
        if seg_idx >= 0:
            trace.segments.append(
                SegmentResult(seg_idx, seg.workload, seg.duration_s, acc.report(seg.duration_s), states)
            )
    return trace
