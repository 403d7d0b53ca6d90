"""Seeded discrete-event simulation of an application's queueing network.

Requests arrive as an open-loop Poisson stream, pick an endpoint i.i.d. from the
workload distribution and walk its call path through per-service FCFS
multi-server queues with exponential service times. Each service keeps a heap of
server free-times, so a visit is resolved the moment it reaches the head of the
global event order: ``start = max(arrival, earliest free server)``. Processing
visits in time order is what makes that FCFS-exact.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from colasim.topology import AppTopology, ClusterState, CostModel, cluster_cost
from colasim.workload import Workload


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 30.0
    timeout_ms: float = 2000.0
    seed: int = 0
    warmup_s: float | None = None
    noise_sd_ms: float = 0.0

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if not self.timeout_ms > 0:
            raise ValueError("timeout_ms must be > 0")
        if self.noise_sd_ms < 0:
            raise ValueError("noise_sd_ms must be >= 0")
        if self.warmup_s is not None and not 0 <= self.warmup_s < self.duration_s:
            raise ValueError("warmup_s must lie in [0, duration_s)")

    @property
    def warmup(self) -> float:
        return 0.1 * self.duration_s if self.warmup_s is None else self.warmup_s

    def with_seed(self, seed: int) -> SimConfig:
        return SimConfig(self.duration_s, self.timeout_ms, seed, self.warmup_s, self.noise_sd_ms)

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "timeout_ms": self.timeout_ms,
            "seed": self.seed,
            "warmup_s": self.warmup_s,
            "noise_sd_ms": self.noise_sd_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SimConfig:
        return cls(**doc)


@dataclass(frozen=True)
class SimReport:
    median_ms: float
    p90_ms: float
    mean_ms: float
    failures_per_s: float
    mean_utilization: tuple[float, ...]
    completed_requests: int
    cost_units: float
    # bookkeeping beyond the headline numbers
    total_arrivals: int = 0
    timed_out: int = 0
    in_flight: int = 0
    mean_wait_ms: tuple[float, ...] = ()
    endpoint_arrivals: tuple[int, ...] = ()
    window_s: float = 0.0

    def latency(self, objective: str) -> float:
        return {"median": self.median_ms, "p90": self.p90_ms, "mean": self.mean_ms}[objective]


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest sample (1-based, clamped)."""
    n = len(samples)
    if n == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    ordered = sorted(samples)
    return float(ordered[_rank(q, n)])


def _rank(q: float, n: int) -> int:
    k = math.ceil(q * n - 1e-12)
    return min(max(k, 1), n) - 1


def _poisson_arrivals(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    if rate <= 0:
        return np.empty(0)
    expected = rate * horizon
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    times = np.cumsum(rng.standard_exponential(chunk) / rate)
    while times[-1] < horizon:
        more = np.cumsum(rng.standard_exponential(chunk) / rate) + times[-1]
        times = np.concatenate([times, more])
    return times[times <= horizon]


@dataclass
class _RawRun:
    latencies_ms: np.ndarray
    timed_out: int
    in_flight: int
    completed: int
    total_arrivals: int
    busy: list[float]
    wait_sum: list[float]
    wait_n: list[int]
    endpoint_arrivals: list[int]
    window: float
    noise_ms: float = 0.0


def _run(workload: Workload, state: ClusterState, topo: AppTopology, cfg: SimConfig) -> _RawRun:
    topo.validate_state(state)
    if len(workload.endpoint_probs) != topo.n_endpoints:
        raise ValueError("workload/topology endpoint count mismatch")
    rng = np.random.default_rng(cfg.seed)
    horizon = cfg.duration_s
    warm = cfg.warmup
    window = horizon - warm
    timeout_s = cfg.timeout_ms / 1000.0
    n_svc = topo.n_services

    arrivals = _poisson_arrivals(rng, workload.total_rps, horizon)
    n = len(arrivals)
    probs = np.asarray(workload.endpoint_probs, dtype=float)
    probs = probs / probs.sum()
    eps = rng.choice(len(probs), size=n, p=probs) if n else np.empty(0, dtype=int)
    plen = np.array([len(p) for p in topo.paths])
    req_len = plen[eps] if n else np.empty(0, dtype=int)
    offsets = np.concatenate([[0], np.cumsum(req_len)[:-1]]) if n else np.empty(0, dtype=int)
    service_draws = rng.standard_exponential(int(req_len.sum()) if n else 0)
    noise_ms = float(rng.normal(0.0, cfg.noise_sd_ms)) if cfg.noise_sd_ms > 0 else 0.0

    arr = arrivals.tolist()
    ep = eps.tolist()
    off = offsets.tolist()
    draws = service_draws.tolist()
    paths = topo.paths
    base_s = [e.base_delay_ms / 1000.0 for e in topo.endpoints]
    scale = [1.0 / s.mu for s in topo.services]
    free = [[0.0] * c for c in state.replicas]
    busy = [0.0] * n_svc
    wait_sum = [0.0] * n_svc
    wait_n = [0] * n_svc
    endpoint_arrivals = np.bincount(eps, minlength=topo.n_endpoints).tolist() if n else [0] * topo.n_endpoints

    lat = []
    lat_append = lat.append
    timed_out = 0
    in_flight = 0
    completed = 0
    events: list[tuple[float, int, int, int]] = []
    push, pop, replace = heapq.heappush, heapq.heappop, heapq.heapreplace
    seq = 0
    i = 0
    while True:
        if i < n and (not events or arr[i] <= events[0][0]):
            t = arr[i]
            r = i
            h = 0
            i += 1
        elif events:
            if events[0][0] > horizon:
                break
            t, _, r, h = pop(events)
        else:
            break
        path = paths[ep[r]]
        s = path[h]
        fh = free[s]
        f0 = fh[0]
        start = t if t > f0 else f0
        dep = start + draws[off[r] + h] * scale[s]
        replace(fh, dep)
        lo = start if start > warm else warm
        hi = dep if dep < horizon else horizon
        if hi > lo:
            busy[s] += hi - lo
        t0 = arr[r]
        if t0 >= warm:
            wait_sum[s] += start - t
            wait_n[s] += 1
        if h + 1 < len(path):
            push(events, (dep, seq, r, h + 1))
            seq += 1
            continue
        if t0 < warm:
            continue
        done = dep + base_s[ep[r]]
        latency = done - t0
        if latency > timeout_s:
            if done <= horizon or horizon - t0 > timeout_s:
                timed_out += 1
                lat_append(cfg.timeout_ms)
            else:
                in_flight += 1
        elif done <= horizon:
            completed += 1
            lat_append(latency * 1000.0)
        else:
            in_flight += 1

    # requests still queued or in service at the horizon
    for _, _, r, _ in events:
        t0 = arr[r]
        if t0 < warm:
            continue
        if horizon - t0 > timeout_s:
            timed_out += 1
            lat_append(cfg.timeout_ms)
        else:
            in_flight += 1

    total = int(np.count_nonzero(arrivals >= warm)) if n else 0
    return _RawRun(
        latencies_ms=np.asarray(lat, dtype=float),
        timed_out=timed_out,
        in_flight=in_flight,
        completed=completed,
        total_arrivals=total,
        busy=busy,
        wait_sum=wait_sum,
        wait_n=wait_n,
        endpoint_arrivals=endpoint_arrivals,
        window=window,
        noise_ms=noise_ms,
    )


def _summarize(
    raw: _RawRun, state: ClusterState, topo: AppTopology, cm: CostModel, cfg: SimConfig
) -> SimReport:
    lat = raw.latencies_ms
    if len(lat):
        ordered = np.sort(lat)
        n = len(ordered)
        median = float(ordered[_rank(0.5, n)])
        p90 = float(ordered[_rank(0.9, n)])
        mean = float(ordered.mean())
    else:
        median = p90 = mean = 0.0
    if raw.noise_ms:
        median, p90, mean = (
            min(max(v + raw.noise_ms, 0.0), cfg.timeout_ms) for v in (median, p90, mean)
        )
    util = tuple(
        min(b / (c * raw.window), 1.0) for b, c in zip(raw.busy, state.replicas)
    )
    waits = tuple(
        (ws / wn) * 1000.0 if wn else 0.0 for ws, wn in zip(raw.wait_sum, raw.wait_n)
    )
    return SimReport(
        median_ms=median,
        p90_ms=p90,
        mean_ms=mean,
        failures_per_s=raw.timed_out / raw.window,
        mean_utilization=util,
        completed_requests=raw.completed,
        cost_units=cluster_cost(state, topo, cm),
        total_arrivals=raw.total_arrivals,
        timed_out=raw.timed_out,
        in_flight=raw.in_flight,
        mean_wait_ms=waits,
        endpoint_arrivals=tuple(raw.endpoint_arrivals),
        window_s=raw.window,
    )


def simulate(
    workload: Workload, state: ClusterState, topo: AppTopology, cm: CostModel, cfg: SimConfig
) -> SimReport:
    """Apply ``workload`` to ``state`` for one sample window and report what was observed."""
    return _summarize(_run(workload, state, topo, cfg), state, topo, cm, cfg)


def simulate_with_samples(
    workload: Workload, state: ClusterState, topo: AppTopology, cm: CostModel, cfg: SimConfig
) -> tuple[SimReport, np.ndarray]:
    """Like :func:`simulate`, also returning the per-request latency samples (ms)."""
    raw = _run(workload, state, topo, cfg)
    return _summarize(raw, state, topo, cm, cfg), raw.latencies_ms


def measure_utilization_delta(
    workload: Workload,
    state: ClusterState,
    topo: AppTopology,
    cm: CostModel,
    cfg: SimConfig,
    background: Sequence[float] | None = None,
) -> list[float]:
    """Per-service utilization increase caused by ``workload`` over an idle window.

    ``background`` injects a fixed occupancy present in both windows.
    """
    bg = list(background) if background is not None else [0.0] * topo.n_services
    idle = simulate(workload.scaled(0.0), state, topo, cm, cfg)
    loaded = simulate(workload, state, topo, cm, cfg)
    idle_u = [min(u + b, 1.0) for u, b in zip(idle.mean_utilization, bg)]
    busy_u = [min(u + b, 1.0) for u, b in zip(loaded.mean_utilization, bg)]
    return [b - a for a, b in zip(idle_u, busy_u)]


@dataclass
class SegmentAccumulator:
    """Pools several sample windows (possibly at different states) into one report."""

    latencies: list[np.ndarray] = field(default_factory=list)
    timed_out: int = 0
    completed: int = 0
    in_flight: int = 0
    arrivals: int = 0
    window: float = 0.0
    cost_time: float = 0.0
    util_time: np.ndarray | None = None

    def add(self, report: SimReport, samples: np.ndarray, duration: float) -> None:
        self.latencies.append(samples)
        self.timed_out += report.timed_out
        self.completed += report.completed_requests
        self.in_flight += report.in_flight
        self.arrivals += report.total_arrivals
        self.window += report.window_s
        self.cost_time += report.cost_units * duration
        u = np.asarray(report.mean_utilization) * report.window_s
        self.util_time = u if self.util_time is None else self.util_time + u

    def report(self, total_duration: float) -> SimReport:
        lat = np.concatenate(self.latencies) if self.latencies else np.empty(0)
        if len(lat):
            ordered = np.sort(lat)
            n = len(ordered)
            median = float(ordered[_rank(0.5, n)])
            p90 = float(ordered[_rank(0.9, n)])
            mean = float(ordered.mean())
        else:
            median = p90 = mean = 0.0
        util = tuple((self.util_time / self.window).tolist()) if self.window else ()
        return SimReport(
            median_ms=median,
            p90_ms=p90,
            mean_ms=mean,
            failures_per_s=self.timed_out / self.window if self.window else 0.0,
            mean_utilization=util,
            completed_requests=self.completed,
            cost_units=self.cost_time / total_duration if total_duration else 0.0,
            total_arrivals=self.arrivals,
            timed_out=self.timed_out,
            in_flight=self.in_flight,
            window_s=self.window,
        )
