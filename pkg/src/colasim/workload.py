"""Workload contexts, training grids and the evaluation schedule shapes."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_TOL = 1e-9


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    total_rps: float
    endpoint_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "endpoint_probs", tuple(float(p) for p in self.endpoint_probs))
        if self.total_rps < 0 or not math.isfinite(self.total_rps):
            raise WorkloadError(f"total_rps must be finite and >= 0, got {self.total_rps}")
        if not self.endpoint_probs:
            raise WorkloadError("empty endpoint distribution")
        if any(p < 0 for p in self.endpoint_probs):
            raise WorkloadError("negative endpoint probability")
        if self.total_rps > 0 and abs(sum(self.endpoint_probs) - 1.0) > PROB_TOL:
            raise WorkloadError(f"endpoint probabilities sum to {sum(self.endpoint_probs)}")

    def context(self) -> tuple[float, ...]:
        """Per-operation request rates (the unnormalized context vector)."""
        return tuple(self.total_rps * p for p in self.endpoint_probs)

    @classmethod
    def from_context(cls, rates: Sequence[float]) -> Workload:
        total = float(sum(rates))
        if total == 0:
            n = len(rates)
            return cls(0.0, tuple([1.0 / n] * n))
        return cls(total, tuple(r / total for r in rates))

    def scaled(self, rps: float) -> Workload:
        return Workload(rps, self.endpoint_probs)


def uniform(n: int) -> tuple[float, ...]:
    return tuple([1.0 / n] * n)


@dataclass(frozen=True)
class WorkloadGrid:
    rps_lower: float
    rps_upper: float
    step: float
    distributions: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "distributions", tuple(tuple(float(p) for p in d) for d in self.distributions)
        )
        if self.rps_lower > self.rps_upper:
            raise WorkloadError(f"empty RPS range: {self.rps_lower} > {self.rps_upper}")
        if not self.step > 0:
            raise WorkloadError("grid step must be > 0")
        if not self.distributions:
            raise WorkloadError("grid needs at least one distribution")
        for d in self.distributions:
            if abs(sum(d) - 1.0) > PROB_TOL:
                raise WorkloadError(f"distribution {d} does not sum to 1")

    def rps_values(self) -> list[float]:
        n = int(math.floor((self.rps_upper - self.rps_lower) / self.step + 1e-9))
        return [self.rps_lower + k * self.step for k in range(n + 1)]

    def to_dict(self) -> dict:
        return {
            "rps_lower": self.rps_lower,
            "rps_upper": self.rps_upper,
            "step": self.step,
            "distributions": [list(d) for d in self.distributions],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> WorkloadGrid:
        return cls(
            float(doc["rps_lower"]),
            float(doc["rps_upper"]),
            float(doc["step"]),
            tuple(tuple(d) for d in doc["distributions"]),
        )


def grid_points(g: WorkloadGrid) -> list[Workload]:
    """All grid workloads, distribution-major, ascending RPS within each distribution."""
    rps = g.rps_values()
    return [Workload(r, d) for d in g.distributions for r in rps]


def max_adjacent_ratio(g: WorkloadGrid) -> float:
    """Largest upper/lower RPS ratio between neighbouring grid points (worst interpolation inflation)."""
    rps = [r for r in g.rps_values() if r > 0]
    if len(rps) < 2:
        return 1.0
    return max(b / a for a, b in zip(rps, rps[1:]))


# -- schedules -------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    workload: Workload
    duration_s: float

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise WorkloadError(f"segment duration must be > 0, got {self.duration_s}")


@dataclass(frozen=True)
class WorkloadSchedule:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    def __add__(self, other: WorkloadSchedule) -> WorkloadSchedule:
        return WorkloadSchedule(self.segments + other.segments)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def total_duration_s(self) -> float:
        return sum(s.duration_s for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "segments": [
                {
                    "rps": s.workload.total_rps,
                    "probs": list(s.workload.endpoint_probs),
                    "duration_s": s.duration_s,
                }
                for s in self.segments
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> WorkloadSchedule:
        return cls(
            tuple(
                Segment(Workload(float(s["rps"]), tuple(s["probs"])), float(s["duration_s"]))
                for s in doc["segments"]
            )
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> WorkloadSchedule:
        return cls.from_dict(json.loads(Path(path).read_text()))


def constant_rate(rps: float, dist: Sequence[float], duration_s: float) -> WorkloadSchedule:
    return WorkloadSchedule((Segment(Workload(rps, tuple(dist)), duration_s),))


def is_unimodal(rates: Sequence[float]) -> bool:
    i = 0
    while i + 1 < len(rates) and rates[i + 1] >= rates[i]:
        i += 1
    while i + 1 < len(rates) and rates[i + 1] <= rates[i]:
        i += 1
    return i == len(rates) - 1


def diurnal(rates: Sequence[float], dist: Sequence[float], seg_duration_s: float) -> WorkloadSchedule:
    if not rates:
        raise WorkloadError("diurnal schedule needs at least one rate")
    if not is_unimodal(rates):
        warnings.warn(f"diurnal rates {list(rates)} are not increase-then-decrease", stacklevel=2)
    return WorkloadSchedule(tuple(Segment(Workload(r, tuple(dist)), seg_duration_s) for r in rates))


def alternating(
    high_range: tuple[float, float],
    low_range: tuple[float, float],
    n_cycles: int,
    seg_duration_s: float,
    seed: int,
    dist: Sequence[float] = (1.0,),
) -> WorkloadSchedule:
    for lo, hi in (high_range, low_range):
        if lo > hi or lo < 0:
            raise WorkloadError(f"invalid rate range ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    segs = []
    for _ in range(n_cycles):
        low = float(rng.uniform(*low_range))
        high = float(rng.uniform(*high_range))
        segs.append(Segment(Workload(low, tuple(dist)), seg_duration_s))
        segs.append(Segment(Workload(high, tuple(dist)), seg_duration_s))
    return WorkloadSchedule(tuple(segs))


def perturb_distribution(dist: Sequence[float], factor: float, endpoint_index: int) -> tuple[float, ...]:
    if factor < 0:
        raise WorkloadError("perturbation factor must be >= 0")
    out = list(dist)
    out[endpoint_index] *= factor
    total = sum(out)
    if total == 0:
        raise WorkloadError("perturbation removed all probability mass")
    return tuple(p / total for p in out)
