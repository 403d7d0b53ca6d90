"""Application model: services, endpoints, cluster states and cost accounting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from colasim.workload import Workload


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    mu: float
    max_replicas: int
    min_replicas: int = 1

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise TopologyError(f"service {self.name!r}: mu must be > 0, got {self.mu}")
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise TopologyError(
                f"service {self.name!r}: need 1 <= min_replicas <= max_replicas, "
                f"got {self.min_replicas}..{self.max_replicas}"
            )


@dataclass(frozen=True)
class EndpointSpec:
    name: str
    path: tuple[str, ...]
    base_delay_ms: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(self.path))
        if not self.path:
            raise TopologyError(f"endpoint {self.name!r}: empty path")
        if self.base_delay_ms < 0:
            raise TopologyError(f"endpoint {self.name!r}: negative base_delay_ms")


@dataclass(frozen=True)
class AppTopology:
    services: tuple[ServiceSpec, ...]
    endpoints: tuple[EndpointSpec, ...]
    name: str = "app"
    # endpoint index -> service indices visited, in order
    _paths: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        names = [s.name for s in self.services]
        if len(set(names)) != len(names):
            raise TopologyError("duplicate service names")
        ep_names = [e.name for e in self.endpoints]
        if len(set(ep_names)) != len(ep_names):
            raise TopologyError("duplicate endpoint names")
        if not self.services or not self.endpoints:
            raise TopologyError("topology needs at least one service and one endpoint")
        index = {n: i for i, n in enumerate(names)}
        paths = []
        for ep in self.endpoints:
            missing = [s for s in ep.path if s not in index]
            if missing:
                raise TopologyError(f"endpoint {ep.name!r} references unknown services {missing}")
            paths.append(tuple(index[s] for s in ep.path))
        object.__setattr__(self, "_paths", tuple(paths))

    @property
    def n_services(self) -> int:
        return len(self.services)

    @property
    def n_endpoints(self) -> int:
        return len(self.endpoints)

    @property
    def paths(self) -> tuple[tuple[int, ...], ...]:
        return self._paths

    def service_index(self, name: str) -> int:
        for i, s in enumerate(self.services):
            if s.name == name:
                return i
        raise KeyError(name)

    def min_state(self) -> ClusterState:
        return ClusterState(tuple(s.min_replicas for s in self.services))

    def max_state(self) -> ClusterState:
        return ClusterState(tuple(s.max_replicas for s in self.services))

    def state_space_size(self) -> int:
        return math.prod(s.max_replicas - s.min_replicas + 1 for s in self.services)

    def validate_state(self, state: ClusterState) -> None:
        if len(state.replicas) != self.n_services:
            raise TopologyError(
                f"state has {len(state.replicas)} entries, topology has {self.n_services} services"
            )
        for r, s in zip(state.replicas, self.services):
            if not s.min_replicas <= r <= s.max_replicas:
                raise TopologyError(
                    f"service {s.name!r}: {r} replicas outside [{s.min_replicas}, {s.max_replicas}]"
                )

    def clamp(self, replicas: Sequence[float]) -> ClusterState:
        """Ceil each coordinate and clamp it into the service's replica range."""
        if len(replicas) != self.n_services:
            raise TopologyError("dimension mismatch")
        out = []
        for r, s in zip(replicas, self.services):
            out.append(min(max(int(math.ceil(r - 1e-9)), s.min_replicas), s.max_replicas))
        return ClusterState(tuple(out))

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "services": [
                {
                    "name": s.name,
                    "mu": s.mu,
                    "max_replicas": s.max_replicas,
                    "min_replicas": s.min_replicas,
                }
                for s in self.services
            ],
            "endpoints": [
                {"name": e.name, "path": list(e.path), "base_delay_ms": e.base_delay_ms}
                for e in self.endpoints
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> AppTopology:
        try:
            services = [
                ServiceSpec(
                    name=str(s["name"]),
                    mu=float(s["mu"]),
                    max_replicas=int(s["max_replicas"]),
                    min_replicas=int(s.get("min_replicas", 1)),
                )
                for s in doc["services"]
            ]
            endpoints = [
                EndpointSpec(
                    name=str(e["name"]),
                    path=tuple(e["path"]),
                    base_delay_ms=float(e.get("base_delay_ms", 0.0)),
                )
                for e in doc["endpoints"]
            ]
        except KeyError as exc:
            raise TopologyError(f"missing field {exc} in topology document") from None
        return cls(tuple(services), tuple(endpoints), name=str(doc.get("name", "app")))


@dataclass(frozen=True, order=True)
class ClusterState:
    replicas: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "replicas", tuple(int(r) for r in self.replicas))
        if any(r < 1 for r in self.replicas):
            raise TopologyError(f"replica counts must be positive: {self.replicas}")

    def __len__(self) -> int:
        return len(self.replicas)

    def __getitem__(self, i: int) -> int:
        return self.replicas[i]

    def with_replicas(self, service: int, count: int) -> ClusterState:
        r = list(self.replicas)
        r[service] = count
        return ClusterState(tuple(r))

    @property
    def total(self) -> int:
        return sum(self.replicas)


class CostMode(str, Enum):
    VM_COUNT = "vm"
    POD_COUNT = "pod"


@dataclass(frozen=True)
class CostModel:
    mode: CostMode = CostMode.VM_COUNT
    pods_per_vm: int = 1
    cost_per_unit: float = 15.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", CostMode(self.mode))
        if self.pods_per_vm < 1:
            raise TopologyError("pods_per_vm must be >= 1")
        if not self.cost_per_unit > 0:
            raise TopologyError("cost_per_unit must be > 0")

    def vm_count(self, state: ClusterState) -> int:
        return sum(-(-r // self.pods_per_vm) for r in state.replicas)

    def units(self, state: ClusterState) -> int:
        """VMs or pods, depending on the billing mode (no unit price applied)."""
        if self.mode is CostMode.POD_COUNT:
            return state.total
        return self.vm_count(state)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "pods_per_vm": self.pods_per_vm,
            "cost_per_unit": self.cost_per_unit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> CostModel:
        return cls(
            mode=CostMode(doc.get("mode", "vm")),
            pods_per_vm=int(doc.get("pods_per_vm", 1)),
            cost_per_unit=float(doc.get("cost_per_unit", 15.0)),
        )


def cluster_cost(state: ClusterState, topo: AppTopology, cm: CostModel) -> float:
    topo.validate_state(state)
    return cm.cost_per_unit * cm.units(state)


def arrival_rates(workload: Workload, topo: AppTopology) -> list[float]:
    """Per-service arrival rate, counting repeated visits along each path."""
    if len(workload.endpoint_probs) != topo.n_endpoints:
        raise TopologyError(
            f"workload has {len(workload.endpoint_probs)} endpoint probabilities, "
            f"topology has {topo.n_endpoints} endpoints"
        )
    rates = [0.0] * topo.n_services
    if workload.total_rps == 0:
        return rates
    for p, path in zip(workload.endpoint_probs, topo.paths):
        for i in path:
            rates[i] += p
    return [workload.total_rps * r for r in rates]


def utilizations(workload: Workload, state: ClusterState, topo: AppTopology) -> list[float]:
    topo.validate_state(state)
    lam = arrival_rates(workload, topo)
    return [l / (c * s.mu) for l, c, s in zip(lam, state.replicas, topo.services)]


# -- bundled topologies ----------------------------------------------------

_DATA = Path(__file__).parent / "data"
BUNDLED = ("sws", "bookinfo4", "boutique11")


def load_topology(source: str | Path) -> AppTopology:
    """Load a topology from a JSON file, or by bundled name (sws, bookinfo4, boutique11)."""
    path = Path(source)
    if str(source) in BUNDLED:
        path = _DATA / f"{source}.json"
    with open(path) as fh:
        doc = json.load(fh)
    return AppTopology.from_dict(doc)


def load_cost_model(path: str | Path) -> CostModel:
    with open(path) as fh:
        return CostModel.from_dict(json.load(fh))
