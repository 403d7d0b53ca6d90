"""The latency/cost reward and the baseline autoscalers (CPU-threshold HPA, linear regression)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from colasim.evaluation import EvaluationTrace, Policy, TickObservation, run_schedule
from colasim.queueing import OVERLOADED
from colasim.simulator import SimConfig
from colasim.topology import AppTopology, ClusterState, CostModel, cluster_cost
from colasim.workload import Workload, WorkloadSchedule


class Objective(str, Enum):
    MEDIAN = "median"
    MEAN = "mean"
    P90 = "p90"


@dataclass(frozen=True)
class RewardParams:
    l_target_ms: float = 50.0
    lambda_weight: float = 1.0 / 3.0
    objective: Objective = Objective.MEDIAN
    cost_model: CostModel = field(default_factory=CostModel)
    timeout_ms: float = 2000.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "objective", Objective(self.objective))
        if not self.l_target_ms > 0:
            raise ValueError("l_target_ms must be > 0")
        if not self.lambda_weight > 0:
            raise ValueError("lambda_weight must be > 0")

    def with_lambda(self, lam: float) -> RewardParams:
        return RewardParams(self.l_target_ms, lam, self.objective, self.cost_model, self.timeout_ms)

    def to_dict(self) -> dict:
        return {
            "l_target_ms": self.l_target_ms,
            "lambda_weight": self.lambda_weight,
            "objective": self.objective.value,
            "cost_model": self.cost_model.to_dict(),
            "timeout_ms": self.timeout_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> RewardParams:
        return cls(
            l_target_ms=float(doc["l_target_ms"]),
            lambda_weight=float(doc["lambda_weight"]),
            objective=Objective(doc.get("objective", "median")),
            cost_model=CostModel.from_dict(doc.get("cost_model", {})),
            timeout_ms=float(doc.get("timeout_ms", 2000.0)),
        )


def reward(p: RewardParams, l_obs_ms, state: ClusterState, topo: AppTopology) -> float:
    """lambda * min(target - observed, 0) - cluster cost. OVERLOADED counts as the timeout."""
    if l_obs_ms is OVERLOADED:
        l_obs_ms = p.timeout_ms
    return p.lambda_weight * min(p.l_target_ms - l_obs_ms, 0.0) - cluster_cost(state, topo, p.cost_model)


# -- Kubernetes CPU-threshold HPA ------------------------------------------


@dataclass(frozen=True)
class HpaConfig:
    threshold: float = 0.5
    period_s: float = 15.0
    per_service: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        for t in (self.threshold, *(self.per_service or ())):
            if not 0 < t <= 1:
                raise ValueError(f"HPA threshold must lie in (0, 1], got {t}")
        if not self.period_s > 0:
            raise ValueError("period_s must be > 0")

    def threshold_for(self, i: int) -> float:
        return self.per_service[i] if self.per_service else self.threshold


def desired_replicas(current: int, utilization: float, threshold: float) -> int:
    # guard against 0.3/0.1-style float noise landing just above an integer
    return math.ceil(round(current * (utilization / threshold), 9))


def hpa_step(
    cfg: HpaConfig, current: ClusterState, measured_util: Sequence[float], topo: AppTopology
) -> ClusterState:
    if len(measured_util) != topo.n_services:
        raise ValueError("measured_util length must equal the number of services")
    out = []
    for i, (r, m, svc) in enumerate(zip(current.replicas, measured_util, topo.services)):
        want = desired_replicas(r, m, cfg.threshold_for(i))
        out.append(min(max(want, svc.min_replicas), svc.max_replicas))
    return ClusterState(tuple(out))


class HpaPolicy(Policy):
    def __init__(self, cfg: HpaConfig, topo: AppTopology):
        self.cfg = cfg
        self.topo = topo
        self.tick_s = cfg.period_s
        self.name = f"CPU-{round(cfg.threshold * 100)}"

    def observe(self, obs: TickObservation, current: ClusterState) -> ClusterState:
        util = [min(max(u, 0.0), 1.0) for u in obs.report.mean_utilization]
        return hpa_step(self.cfg, current, util, self.topo)


def run_hpa(
    cfg: HpaConfig,
    schedule: WorkloadSchedule,
    topo: AppTopology,
    cm: CostModel,
    sim_cfg: SimConfig,
    settle_s: float = 0.0,
    initial_state: ClusterState | None = None,
) -> EvaluationTrace:
    return run_schedule(HpaPolicy(cfg, topo), schedule, topo, cm, sim_cfg, settle_s, initial_state)


# -- linear-regression autoscaler ------------------------------------------


def lr_features(workload: Workload, state: ClusterState) -> np.ndarray:
    """[replicas_i..., rps/replicas_i..., rps, 1]."""
    r = np.asarray(state.replicas, dtype=float)
    rps = workload.total_rps
    return np.concatenate([r, rps / r, [rps, 1.0]])


def lr_feature_names(topo: AppTopology) -> list[str]:
    names = [f"replicas[{s.name}]" for s in topo.services]
    names += [f"rps_per_replica[{s.name}]" for s in topo.services]
    return names + ["rps", "intercept"]


@dataclass(frozen=True)
class LinRegModel:
    feature_names: tuple[str, ...]
    coefficients: tuple[float, ...]
    n_samples: int
    regularized: bool = False

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in self.coefficients):
            raise ValueError("non-finite regression coefficient")

    def predict(self, workload: Workload, state: ClusterState) -> float:
        return float(lr_features(workload, state) @ np.asarray(self.coefficients))

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "coefficients": list(self.coefficients),
            "n_samples": self.n_samples,
            "regularized": self.regularized,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> LinRegModel:
        return cls(
            tuple(doc["feature_names"]),
            tuple(float(c) for c in doc["coefficients"]),
            int(doc["n_samples"]),
            bool(doc.get("regularized", False)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> LinRegModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


RIDGE_EPS = 1e-8


def lr_train(
    samples: Sequence[tuple[Workload, ClusterState, float]], topo: AppTopology
) -> LinRegModel:
    """Ordinary least squares on (workload, state) -> reward; ridge fallback if rank deficient."""
    names = lr_feature_names(topo)
    if len(samples) < len(names):
        raise ValueError(f"need at least {len(names)} samples, got {len(samples)}")
    X = np.stack([lr_features(w, s) for w, s, _ in samples])
    y = np.asarray([r for _, _, r in samples], dtype=float)
    rank = np.linalg.matrix_rank(X)
    regularized = rank < X.shape[1]
    if regularized:
        A = X.T @ X + RIDGE_EPS * np.eye(X.shape[1])
        coef = np.linalg.solve(A, X.T @ y)
    else:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return LinRegModel(tuple(names), tuple(float(c) for c in coef), len(samples), regularized)


def random_states(topo: AppTopology, n: int, rng: np.random.Generator) -> np.ndarray:
    cols = [
        rng.integers(s.min_replicas, s.max_replicas + 1, size=n) for s in topo.services
    ]
    return np.stack(cols, axis=1)


def lr_infer(
    model: LinRegModel,
    workload: Workload,
    topo: AppTopology,
    cm: CostModel | None = None,
    n_candidates: int = 20000,
    seed: int = 0,
) -> ClusterState:
    """Best predicted-reward state among uniformly sampled candidates; ties go to the cheapest."""
    cm = cm or CostModel()
    rng = np.random.default_rng(seed)
    cands = random_states(topo, n_candidates, rng).astype(float)
    coef = np.asarray(model.coefficients)
    d = topo.n_services
    rps = workload.total_rps
    pred = cands @ coef[:d] + (rps / cands) @ coef[d : 2 * d] + rps * coef[2 * d] + coef[2 * d + 1]
    best = pred.max()
    tied = {tuple(int(v) for v in row) for row in cands[pred == best]}
    return min(
        (ClusterState(t) for t in tied),
        key=lambda s: (cluster_cost(s, topo, cm), s.replicas),
    )


class LinRegPolicy(Policy):
    """Re-solves the regression argmax for the observed RPS every period."""

    def __init__(self, model: LinRegModel, topo: AppTopology, cm: CostModel, period_s: float = 60.0, seed: int = 0):
        self.model = model
        self.topo = topo
        self.cm = cm
        self.tick_s = period_s
        self.seed = seed
        self.name = "LR"

    def observe(self, obs: TickObservation, current: ClusterState) -> ClusterState:
        w = Workload(obs.observed_rps, obs.observed_probs)
        return lr_infer(self.model, w, self.topo, self.cm, seed=self.seed)
