"""Closed-form M/M/c results and the bounds used to justify selection and interpolation."""

from __future__ import annotations

import math
from dataclasses import dataclass

from colasim.topology import AppTopology, ClusterState, arrival_rates
from colasim.workload import Workload


class UnstableQueueError(ValueError):
    """Raised when a steady-state quantity is requested for rho >= 1."""


class _Overloaded:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "OVERLOADED"

    def __reduce__(self):
        return (_Overloaded, ())


OVERLOADED = _Overloaded()


@dataclass(frozen=True)
class MmcQueue:
    c: int
    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.c < 1:
            raise ValueError("c must be a positive integer")
        if self.lam < 0:
            raise ValueError("arrival rate must be >= 0")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")

    @property
    def rho(self) -> float:
        return self.lam / (self.c * self.mu)

    @property
    def offered_load(self) -> float:
        return self.lam / self.mu

    def _check_stable(self) -> None:
        if self.rho >= 1:
            raise UnstableQueueError(f"unstable queue: rho={self.rho:.4g} >= 1")


def erlang_b(c: int, offered_load: float) -> float:
    """Blocking probability of M/M/c/c via the standard recurrence."""
    if offered_load == 0:
        return 0.0
    inv_b = 1.0
    for k in range(1, c + 1):
        inv_b = 1.0 + (k / offered_load) * inv_b
    return 1.0 / inv_b


def erlang_c(q: MmcQueue) -> float:
    q._check_stable()
    if q.lam == 0:
        return 0.0
    b = erlang_b(q.c, q.offered_load)
    rho = q.rho
    return b / (1.0 - rho * (1.0 - b))


def erlang_c_naive(q: MmcQueue) -> float:
    """Textbook factorial form; overflows for large c, kept as a cross-check."""
    q._check_stable()
    a, rho, c = q.offered_load, q.rho, q.c
    tail = a**c / math.factorial(c) / (1.0 - rho)
    head = sum(a**k / math.factorial(k) for k in range(c))
    return tail / (head + tail)


def wq(q: MmcQueue) -> float:
    """Mean time spent waiting in queue (units of 1/mu)."""
    return erlang_c(q) / (q.c * q.mu - q.lam)


def response_time(q: MmcQueue) -> float:
    return wq(q) + 1.0 / q.mu


def lq(q: MmcQueue) -> float:
    return wq(q) * q.lam


def prop1_bound(c: int, rho: float) -> float:
    """Upper bound on the queue-length reduction from adding one server at utilization rho."""
    if c < 1:
        raise ValueError("c must be a positive integer")
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    one_m = 1.0 - rho
    bracket = rho * rho * c / (c + 1) + 1.0 / one_m**2 + rho * one_m / one_m**2
    return bracket * (rho / (c + 1))


def prop2_ratio(lambda_l: float, lambda_u: float) -> float:
    """Worst-case queueing-delay inflation of a policy interpolated between two trained rates."""
    if lambda_l <= 0 or lambda_u <= 0:
        raise ValueError("rates must be positive")
    if lambda_l > lambda_u:
        raise ValueError("need lambda_l <= lambda_u")
    return lambda_u / lambda_l


def analytic_endpoint_latencies(workload: Workload, state: ClusterState, topo: AppTopology):
    """Mean latency in ms for each endpoint, or OVERLOADED if any used queue is unstable."""
    topo.validate_state(state)
    lam = arrival_rates(workload, topo)
    per_visit = []
    for i, svc in enumerate(topo.services):
        q = MmcQueue(state.replicas[i], lam[i], svc.mu)
        per_visit.append(None if q.rho >= 1 else response_time(q) * 1000.0)
    out = []
    for ep, path, p in zip(topo.endpoints, topo.paths, workload.endpoint_probs):
        if workload.total_rps > 0 and p > 0 and any(per_visit[i] is None for i in path):
            return OVERLOADED
        if any(per_visit[i] is None for i in path):
            # unused endpoint crossing an overloaded queue
            out.append(math.inf)
            continue
        out.append(ep.base_delay_ms + sum(per_visit[i] for i in path))
    return out


def analytic_mean_latency(workload: Workload, state: ClusterState, topo: AppTopology):
    per_ep = analytic_endpoint_latencies(workload, state, topo)
    if per_ep is OVERLOADED:
        return OVERLOADED
    return sum(p * l for p, l in zip(workload.endpoint_probs, per_ep) if p > 0)
