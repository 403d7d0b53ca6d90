"""Offline policy search: congested-service selection, a UCB1 bandit per service, lambda escalation, warm starts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

from colasim.autoscalers import Objective, RewardParams, reward
from colasim.evaluation import derive_seed
from colasim.queueing import OVERLOADED, analytic_mean_latency
from colasim.simulator import SimConfig, SimReport, simulate
from colasim.topology import AppTopology, ClusterState, CostModel, cluster_cost, utilizations
from colasim.workload import Workload, WorkloadGrid, grid_points


# -- samplers: run one sample window for a (workload, state) pair ----------


class SimSampler:
    """Runs one DES sample window per call, with a fresh derived seed each time."""

    def __init__(self, topo: AppTopology, cm: CostModel, sim_cfg: SimConfig):
        self.topo = topo
        self.cm = cm
        self.sim_cfg = sim_cfg
        self.calls = 0

    def _next_cfg(self) -> SimConfig:
        self.calls += 1
        return self.sim_cfg.with_seed(derive_seed(self.sim_cfg.seed, self.calls))

    def __call__(self, workload: Workload, state: ClusterState) -> SimReport:
        return simulate(workload, state, self.topo, self.cm, self._next_cfg())

    def utilization_delta(self, workload: Workload, state: ClusterState) -> list[float]:
        idle = self(workload.scaled(0.0), state).mean_utilization
        loaded = self(workload, state).mean_utilization
        return [b - a for a, b in zip(idle, loaded)]


class AnalyticSampler:
    """Noise-free stand-in for the simulator: every latency field is the analytic mean."""

    def __init__(self, topo: AppTopology, cm: CostModel, timeout_ms: float = 2000.0):
        self.topo = topo
        self.cm = cm
        self.timeout_ms = timeout_ms
        self.calls = 0

    def __call__(self, workload: Workload, state: ClusterState) -> SimReport:
        self.calls += 1
        lat = analytic_mean_latency(workload, state, self.topo)
        lat = self.timeout_ms if lat is OVERLOADED else min(lat, self.timeout_ms)
        util = tuple(min(u, 1.0) for u in utilizations(workload, state, self.topo))
        return SimReport(
            median_ms=lat,
            p90_ms=lat,
            mean_ms=lat,
            failures_per_s=0.0,
            mean_utilization=util,
            completed_requests=0,
            cost_units=cluster_cost(state, self.topo, self.cm),
        )

    def utilization_delta(self, workload: Workload, state: ClusterState) -> list[float]:
        self.calls += 1
        return [min(u, 1.0) for u in utilizations(workload, state, self.topo)]


# -- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class TrainerConfig:
    reward: RewardParams = field(default_factory=RewardParams)
    lambda_initial: float = 1.0 / 3.0
    lambda_max: float = 200.0
    epsilon: float = 0.01
    lambda_increment: float | None = None  # defaults to 1/epsilon
    t_iters: int = 10
    f_trials: int = 10
    arm_window: int = 2
    textbook_ucb: bool = False

    def __post_init__(self) -> None:
        if self.lambda_initial > self.lambda_max:
            raise ValueError("lambda_initial must not exceed lambda_max")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.t_iters < 1 or self.arm_window < 0:
            raise ValueError("t_iters must be >= 1 and arm_window >= 0")
        if self.f_trials < 2 * self.arm_window + 1:
            raise ValueError(
                f"f_trials={self.f_trials} cannot explore {2 * self.arm_window + 1} arms at least once"
            )

    @property
    def increment(self) -> float:
        return self.lambda_increment if self.lambda_increment is not None else 1.0 / self.epsilon

    def to_dict(self) -> dict:
        return {
            "reward": self.reward.to_dict(),
            "lambda_initial": self.lambda_initial,
            "lambda_max": self.lambda_max,
            "epsilon": self.epsilon,
            "lambda_increment": self.lambda_increment,
            "t_iters": self.t_iters,
            "f_trials": self.f_trials,
            "arm_window": self.arm_window,
            "textbook_ucb": self.textbook_ucb,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TrainerConfig:
        doc = dict(doc)
        doc["reward"] = RewardParams.from_dict(doc["reward"])
        return cls(**doc)


# -- service selection and the bandit ---------------------------------------


def select_service(util_delta: Sequence[float]) -> int:
    if not len(util_delta):
        raise ValueError("empty utilization vector")
    best = 0
    for i, u in enumerate(util_delta):
        if u > util_delta[best]:
            best = i
    return best


def arm_set(state: ClusterState, service: int, window: int, topo: AppTopology) -> list[int]:
    svc = topo.services[service]
    cur = state.replicas[service]
    lo = max(cur - window, svc.min_replicas)
    hi = min(cur + window, svc.max_replicas)
    return list(range(lo, hi + 1))


class UcbResult(NamedTuple):
    best: int
    latency_ms: float
    counts: dict[int, int]
    mean_rewards: dict[int, float]
    pulls: list[int]
    all_unstable: bool


def ucb(
    arms: Sequence[int],
    observe: Callable[[int], tuple[float, float]],
    f_trials: int,
    epsilon: float,
    textbook: bool = False,
    unstable_latency: float = math.inf,
) -> UcbResult:
    """UCB1 over replica counts. ``observe(arm) -> (latency_ms, reward)`` runs one trial.

    Counts start at ``epsilon`` and the running means at 0. Index ties go to the
    smaller replica count (arms are scanned in ascending order).
    """
    arms = sorted(arms)
    if f_trials < len(arms):
        raise ValueError("f_trials must be >= number of arms")
    n = {a: float(epsilon) for a in arms}
    r = {a: 0.0 for a in arms}
    lat = {a: 0.0 for a in arms}
    pulls: list[int] = []
    worst_seen = True
    for t in range(1, f_trials + 1):
        bonus = math.sqrt(2.0 * math.log(t))
        best_arm, best_idx = arms[0], -math.inf
        for a in arms:
            idx = r[a] + (bonus / math.sqrt(n[a]) if textbook else bonus / n[a])
            if idx > best_idx:
                best_arm, best_idx = a, idx
        l_t, r_t = observe(best_arm)
        worst_seen = worst_seen and l_t >= unstable_latency
        n[best_arm] += 1
        r[best_arm] += (r_t - r[best_arm]) / n[best_arm]
        lat[best_arm] += (l_t - lat[best_arm]) / n[best_arm]
        pulls.append(best_arm)
    a_opt = arms[0]
    for a in arms:
        if r[a] > r[a_opt]:
            a_opt = a
    counts = {a: pulls.count(a) for a in arms}
    return UcbResult(a_opt, lat[a_opt], counts, dict(r), pulls, worst_seen)


# -- optimizeCluster ---------------------------------------------------------


@dataclass
class OptimizeResult:
    state: ClusterState
    latency_ms: float
    samples: int
    met: bool
    lambdas: list[float]
    cost_history: list[float]
    all_unstable_events: int = 0
    trial_cost: float = 0.0  # sum of cluster cost over every bandit trial

    @property
    def status(self) -> str:
        return "met" if self.met else "target_unmet"


def optimize_cluster(
    workload: Workload,
    start_state: ClusterState,
    cfg: TrainerConfig,
    topo: AppTopology,
    sampler,
) -> OptimizeResult:
    """Hill-climb one workload: pick the most utilized service, bandit its replica count, repeat."""
    topo.validate_state(start_state)
    rp = cfg.reward
    objective = rp.objective.value
    state = start_state
    lam = cfg.lambda_initial
    lambdas: list[float] = []
    costs: list[float] = []
    samples = 0
    unstable = 0
    l_opt = math.inf
    met = False
    trial_cost = 0.0
    while lam <= cfg.lambda_max + 1e-12:
        lambdas.append(lam)
        params = rp.with_lambda(lam)
        for _ in range(cfg.t_iters):
            service = select_service(sampler.utilization_delta(workload, state))

            def observe(count: int, _state=state, _service=service, _params=params):
                nonlocal trial_cost
                candidate = _state.with_replicas(_service, count)
                report = sampler(workload, candidate)
                l_obs = report.latency(objective)
                trial_cost += cluster_cost(candidate, topo, rp.cost_model)
                return l_obs, reward(_params, l_obs, candidate, topo)

            res = ucb(
                arm_set(state, service, cfg.arm_window, topo),
                observe,
                cfg.f_trials,
                cfg.epsilon,
                cfg.textbook_ucb,
                unstable_latency=rp.timeout_ms,
            )
            samples += cfg.f_trials
            unstable += res.all_unstable
            state = state.with_replicas(service, res.best)
            l_opt = res.latency_ms
            costs.append(cluster_cost(state, topo, rp.cost_model))
            if l_opt <= rp.l_target_ms:
                met = True
                break
        if met:
            break
        lam += cfg.increment
    return OptimizeResult(state, l_opt, samples, met, lambdas, costs, unstable, trial_cost)


# -- training over a grid ----------------------------------------------------


@dataclass(frozen=True)
class PolicyEntry:
    dist_index: int
    rps: float
    state: ClusterState
    achieved_latency_ms: float
    samples: int
    met: bool = True
    trial_cost: float = 0.0


@dataclass
class TrainedPolicy:
    grid: WorkloadGrid
    reward_params: RewardParams
    entries: dict[tuple[int, float], PolicyEntry]

    def entry(self, dist_index: int, rps: float) -> PolicyEntry:
        return self.entries[(dist_index, rps)]

    def rps_values(self, dist_index: int) -> list[float]:
        return sorted(r for d, r in self.entries if d == dist_index)

    @property
    def total_samples(self) -> int:
        return sum(e.samples for e in self.entries.values())

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "reward_params": self.reward_params.to_dict(),
            "entries": [
                {
                    "dist_index": e.dist_index,
                    "rps": e.rps,
                    "replicas": list(e.state.replicas),
                    "achieved_latency_ms": e.achieved_latency_ms,
                    "samples": e.samples,
                    "met": e.met,
                    "trial_cost": e.trial_cost,
                }
                for e in sorted(self.entries.values(), key=lambda e: (e.dist_index, e.rps))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TrainedPolicy:
        entries = {}
        for e in doc["entries"]:
            pe = PolicyEntry(
                int(e["dist_index"]),
                float(e["rps"]),
                ClusterState(tuple(e["replicas"])),
                float(e["achieved_latency_ms"]),
                int(e["samples"]),
                bool(e.get("met", True)),
                float(e.get("trial_cost", 0.0)),
            )
            entries[(pe.dist_index, pe.rps)] = pe
        return cls(WorkloadGrid.from_dict(doc["grid"]), RewardParams.from_dict(doc["reward_params"]), entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> TrainedPolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self, topo: AppTopology) -> None:
        for w_idx, d in enumerate(self.grid.distributions):
            for r in self.grid.rps_values():
                if (w_idx, r) not in self.entries:
                    raise ValueError(f"policy missing grid point (dist {w_idx}, rps {r})")
        for e in self.entries.values():
            topo.validate_state(e.state)


def train(
    grid: WorkloadGrid,
    cfg: TrainerConfig,
    topo: AppTopology,
    sampler,
    warm_start: bool = True,
    initial_policy: Callable[[Workload], ClusterState] | None = None,
) -> TrainedPolicy:
    """Optimize every grid point in ascending RPS, each starting from its predecessor's answer.

    ``initial_policy`` supplies the starting state for the first point of each
    distribution (and for every point when ``warm_start`` is off).
    """
    entries: dict[tuple[int, float], PolicyEntry] = {}
    rps_values = grid.rps_values()
    points = grid_points(grid)
    for d_idx in range(len(grid.distributions)):
        prev: ClusterState | None = None
        chain = points[d_idx * len(rps_values) : (d_idx + 1) * len(rps_values)]
        for w in chain:
            if warm_start and prev is not None:
                start = prev
            elif initial_policy is not None:
                start = initial_policy(w)
            else:
                start = topo.min_state()
            res = optimize_cluster(w, start, cfg, topo, sampler)
            entries[(d_idx, w.total_rps)] = PolicyEntry(
                d_idx, w.total_rps, res.state, res.latency_ms, res.samples, res.met, res.trial_cost
            )
            prev = res.state
    return TrainedPolicy(grid, cfg.reward, entries)
