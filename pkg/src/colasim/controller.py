"""Online side of a trained policy: interpolation, fallback and ordered scaling plans."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from colasim.autoscalers import HpaConfig, hpa_step
from colasim.evaluation import EvaluationTrace, Policy, TickObservation, run_schedule
from colasim.simulator import SimConfig
from colasim.topology import AppTopology, ClusterState, CostModel
from colasim.trainer import TrainedPolicy
from colasim.workload import Workload, WorkloadSchedule


class OutOfRange(Exception):
    """The observed RPS lies outside the trained grid."""


@dataclass(frozen=True)
class ControllerConfig:
    metrics_period_s: float = 60.0
    actuation_lag_s: float = 75.0
    fallback_threshold: float = 0.30
    fallback_hpa: HpaConfig = field(default_factory=lambda: HpaConfig(threshold=0.5))
    tick_s: float = 15.0

    def __post_init__(self) -> None:
        for name in ("metrics_period_s", "actuation_lag_s", "fallback_threshold", "tick_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


def interpolate_rps(policy: TrainedPolicy, dist_index: int, observed_rps: float) -> list[float]:
    """Piecewise-linear state between the two trained RPS values bracketing ``observed_rps``."""
    rps = policy.rps_values(dist_index)
    if not rps:
        raise KeyError(f"no trained entries for distribution {dist_index}")
    tol = 1e-9 * max(1.0, abs(rps[-1]))
    if observed_rps < rps[0] - tol or observed_rps > rps[-1] + tol:
        raise OutOfRange(f"{observed_rps} outside trained range [{rps[0]}, {rps[-1]}]")
    k = bisect.bisect_left(rps, observed_rps - tol)
    if abs(rps[k] - observed_rps) <= tol:
        return [float(r) for r in policy.entry(dist_index, rps[k]).state.replicas]
    lower, upper = rps[k - 1], rps[k]
    d_lower = observed_rps - lower
    d_upper = upper - observed_rps
    w_lower = d_upper / (d_lower + d_upper)
    w_upper = d_lower / (d_lower + d_upper)
    s_lo = policy.entry(dist_index, lower).state.replicas
    s_hi = policy.entry(dist_index, upper).state.replicas
    return [w_lower * a + w_upper * b for a, b in zip(s_lo, s_hi)]


def distribution_weights(observed: Sequence[float], trained: Sequence[Sequence[float]]) -> list[float]:
    """Inverse-Euclidean-distance weights; an exact match takes all the weight."""
    dists = [math.dist(observed, d) for d in trained]
    for j, d in enumerate(dists):
        if d <= 1e-12:
            return [1.0 if i == j else 0.0 for i in range(len(dists))]
    inv = [1.0 / d for d in dists]
    total = sum(inv)
    return [v / total for v in inv]


def interpolate_distribution(policy: TrainedPolicy, observed: Workload) -> list[float]:
    weights = distribution_weights(observed.endpoint_probs, policy.grid.distributions)
    out = None
    for j, w in enumerate(weights):
        if w == 0:
            continue
        s = interpolate_rps(policy, j, observed.total_rps)
        out = [w * v for v in s] if out is None else [o + w * v for o, v in zip(out, s)]
    return out


class ActionKind(str, Enum):
    ADD_VMS = "add_vms"
    SCALE_PODS = "scale_pods"
    REMOVE_VMS = "remove_vms"


@dataclass(frozen=True)
class ScalingAction:
    kind: ActionKind
    target: ClusterState
    vms: int = 0  # VMs added/removed (0 for pod actions)
    lag_s: float = 0.0


@dataclass(frozen=True)
class ScalingPlan:
    target: ClusterState
    actions: tuple[ScalingAction, ...]
    fallback: bool = False

    @property
    def kinds(self) -> list[ActionKind]:
        return [a.kind for a in self.actions]


def plan_transition(current: ClusterState, target: ClusterState, cm: CostModel, lag_s: float) -> tuple[ScalingAction, ...]:
    """Scale up: VMs first, then pods. Scale down: pods first, then drain and remove VMs."""
    vm_now, vm_next = cm.vm_count(current), cm.vm_count(target)
    actions = []
    if vm_next > vm_now:
        actions.append(ScalingAction(ActionKind.ADD_VMS, target, vm_next - vm_now, lag_s))
    if target != current:
        actions.append(ScalingAction(ActionKind.SCALE_PODS, target, 0, lag_s))
    if vm_next < vm_now:
        actions.append(ScalingAction(ActionKind.REMOVE_VMS, target, vm_now - vm_next, lag_s))
    return tuple(actions)


def controller_step(
    cfg: ControllerConfig,
    policy: TrainedPolicy,
    observed: Workload,
    current: ClusterState,
    topo: AppTopology,
    cm: CostModel | None = None,
    measured_util: Sequence[float] | None = None,
) -> ScalingPlan:
    cm = cm or CostModel()
    upper = policy.grid.rps_upper
    lower = policy.grid.rps_lower
    if observed.total_rps > (1.0 + cfg.fallback_threshold) * upper:
        util = measured_util if measured_util is not None else [cfg.fallback_hpa.threshold] * topo.n_services
        util = [min(max(u, 0.0), 1.0) for u in util]
        target = hpa_step(cfg.fallback_hpa, current, util, topo)
        return ScalingPlan(target, plan_transition(current, target, cm, 0.0), fallback=True)
    # between the grid edge and the fallback threshold the edge policy is held
    clamped = observed.scaled(min(max(observed.total_rps, lower), upper))
    target = topo.clamp(interpolate_distribution(policy, clamped))
    return ScalingPlan(target, plan_transition(current, target, cm, cfg.actuation_lag_s))


class ColaController(Policy):
    """Metrics agent + controller: acts once per metrics period on the previous period's traffic."""

    def __init__(self, cfg: ControllerConfig, policy: TrainedPolicy, topo: AppTopology, cm: CostModel):
        self.cfg = cfg
        self.policy = policy
        self.topo = topo
        self.cm = cm
        self.tick_s = cfg.tick_s
        self.name = "COLA"
        self._arrivals = [0.0] * topo.n_endpoints
        self._elapsed = 0.0
        self._pending: list[tuple[float, ClusterState]] = []
        self._since_hpa = 0.0
        self.fallback_active = False
        self.plans: list[tuple[float, ScalingPlan]] = []

    def observe(self, obs: TickObservation, current: ClusterState) -> ClusterState:
        now = obs.time_s
        self._elapsed += obs.duration_s
        self._since_hpa += obs.duration_s
        for j, p in enumerate(obs.observed_probs):
            self._arrivals[j] += p * obs.observed_rps * obs.duration_s

        if self._elapsed >= self.cfg.metrics_period_s - 1e-9:
            total = sum(self._arrivals)
            rps = total / self._elapsed
            probs = (
                tuple(a / total for a in self._arrivals) if total else obs.workload.endpoint_probs
            )
            self._arrivals = [0.0] * self.topo.n_endpoints
            self._elapsed = 0.0
            observed = Workload(rps, probs)
            plan = controller_step(
                self.cfg, self.policy, observed, current, self.topo, self.cm, obs.report.mean_utilization
            )
            self.plans.append((now, plan))
            was_fallback = self.fallback_active
            self.fallback_active = plan.fallback
            if plan.fallback:
                self._pending.clear()
                self._since_hpa = 0.0
                return plan.target
            if was_fallback:
                self._pending.clear()
            self._pending.append((now + self.cfg.actuation_lag_s, plan.target))
        elif self.fallback_active and self._since_hpa >= self.cfg.fallback_hpa.period_s - 1e-9:
            self._since_hpa = 0.0
            util = [min(max(u, 0.0), 1.0) for u in obs.report.mean_utilization]
            return hpa_step(self.cfg.fallback_hpa, current, util, self.topo)

        state = current
        while self._pending and self._pending[0][0] <= now + 1e-9:
            _, state = self._pending.pop(0)
        return state


def run_controller(
    cfg: ControllerConfig,
    policy: TrainedPolicy,
    schedule: WorkloadSchedule,
    topo: AppTopology,
    cm: CostModel,
    sim_cfg: SimConfig,
    settle_s: float = 0.0,
    initial_state: ClusterState | None = None,
) -> tuple[EvaluationTrace, ColaController]:
    ctrl = ColaController(cfg, policy, topo, cm)
    trace = run_schedule(ctrl, schedule, topo, cm, sim_cfg, settle_s, initial_state)
    return trace, ctrl
