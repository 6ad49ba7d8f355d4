"""Analytical performance model for ring-all-reduce (RAR) training jobs.

Covers the domain types (jobs, cluster, placements, schedules), the
contention degree of a job given the set of co-running placements, the
bandwidth degradation under contention, the per-iteration time of a job and
the resulting completion time, plus a checker for the gang-scheduling
constraints a schedule must satisfy.

Time is measured in slots; slots are 1-based and a job is active in slots
``start..end`` inclusive.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

EPS = 1e-9


class ModelError(ValueError):
    """Raised on out-of-domain arguments to the model functions."""


class HorizonExceeded(RuntimeError):
    """A job does not reach its iteration target within the horizon."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class JobSpec:
    id: int
    gpus_requested: int
    iterations: int
    gradient_size: float
    minibatch: int = 1
    fp_per_sample: float = 0.0
    bp_time: float = 0.0
    server_spread_factor: float = 1.0

    def __post_init__(self):
        if self.gpus_requested < 1:
            raise ModelError(f"job {self.id}: gpus_requested must be >= 1")
        if self.iterations < 1:
            raise ModelError(f"job {self.id}: iterations must be >= 1")
        if not self.gradient_size > 0:
            raise ModelError(f"job {self.id}: gradient_size must be > 0")
        if self.minibatch < 1:
            raise ModelError(f"job {self.id}: minibatch must be >= 1")
        if self.fp_per_sample < 0 or self.bp_time < 0:
            raise ModelError(f"job {self.id}: compute times must be >= 0")
        if self.server_spread_factor < 1:
            raise ModelError(f"job {self.id}: server_spread_factor must be >= 1")

    @property
    def compute_time(self) -> float:
        """FP time for one minibatch plus the BP time, in slots."""
        return self.fp_per_sample * self.minibatch + self.bp_time


@dataclass(frozen=True)
class ClusterSpec:
    server_capacities: tuple
    intra_bandwidth: float
    inter_bandwidth: float
    gpu_speed: float
    contention_fraction: float = 1.0
    overhead_per_server: float = 0.01
    degradation_alpha: float = 0.5
    slot_count: int = 1200
    slot_duration: float = 1.0
    degradation: str = "linear"

    def __post_init__(self):
        caps = tuple(int(c) for c in self.server_capacities)
        object.__setattr__(self, "server_capacities", caps)
        if not caps or any(c < 1 for c in caps):
            raise ModelError("server capacities must be positive integers")
        if not (self.intra_bandwidth > 0 and self.inter_bandwidth > 0):
            raise ModelError("bandwidths must be positive")
        if not self.inter_bandwidth < self.intra_bandwidth:
            raise ModelError("inter-server bandwidth must be below intra-server bandwidth")
        if not self.gpu_speed > 0:
            raise ModelError("gpu_speed must be positive")
        if not 0 < self.contention_fraction <= 1:
            raise ModelError("contention_fraction must lie in (0, 1]")
        if not 0 < self.overhead_per_server <= 1:
            raise ModelError("overhead_per_server must lie in (0, 1]")
        if self.degradation_alpha < 0:
            raise ModelError("degradation_alpha must be >= 0")
        if self.slot_count < 1 or not self.slot_duration > 0:
            raise ModelError("slot_count and slot_duration must be positive")
        if self.degradation not in DEGRADATION_FORMS:
            raise ModelError(f"unknown degradation form {self.degradation!r}")

    @property
    def num_servers(self) -> int:
        return len(self.server_capacities)

    @property
    def total_gpus(self) -> int:
        return sum(self.server_capacities)

    def gpu_index(self):
        """Flat list of (server, gpu) pairs in server-major order."""
        return [(s, g) for s, cap in enumerate(self.server_capacities) for g in range(cap)]


@dataclass(frozen=True)
class Placement:
    job_id: int
    gpus: tuple

    def __post_init__(self):
        gpus = tuple(sorted((int(s), int(g)) for s, g in self.gpus))
        if len(set(gpus)) != len(gpus):
            raise ModelError(f"job {self.job_id}: duplicate GPU in placement")
        object.__setattr__(self, "gpus", gpus)

    @property
    def workers(self) -> int:
        return len(self.gpus)

    def server_counts(self) -> dict:
        counts: dict = defaultdict(int)
        for s, _ in self.gpus:
            counts[s] += 1
        return dict(counts)

    @property
    def num_servers(self) -> int:
        return len({s for s, _ in self.gpus})


@dataclass(frozen=True)
class ScheduleEntry:
    start: int
    end: int
    placement: Placement

    @property
    def duration(self) -> int:
        return self.end - self.start + 1


@dataclass
class Schedule:
    entries: dict = field(default_factory=dict)

    def add(self, job_id, start, end, gpus):
        self.entries[job_id] = ScheduleEntry(int(start), int(end), Placement(job_id, tuple(gpus)))

    @property
    def makespan(self) -> int:
        return max((e.end for e in self.entries.values()), default=0)

    def __len__(self):
        return len(self.entries)

    def occupancy(self) -> dict:
        """Per-job, per-slot server counts ``{job: {slot: {server: y}}}``."""
        occ = {}
        for j, e in self.entries.items():
            counts = e.placement.server_counts()
            occ[j] = {t: dict(counts) for t in range(e.start, e.end + 1)}
        return occ


# --------------------------------------------------------------------------
# contention and bandwidth


def contention_degree(active: Mapping[int, Placement], job_id: int) -> int:
    """Largest number of server-spanning active jobs sharing a server with ``job_id``.

    Zero when the job sits on a single server.
    """
    if job_id not in active:
        raise KeyError(f"job {job_id} is not in the active set")
    own = active[job_id].server_counts()
    if len(own) <= 1:
        return 0
    spanning = defaultdict(int)
    for placement in active.values():
        counts = placement.server_counts()
        if len(counts) > 1:
            for s in counts:
                spanning[s] += 1
    return max(spanning[s] for s in own)


def linear_degradation(alpha: float, k: float) -> float:
    return k + alpha * (k - 1.0)


DEGRADATION_FORMS: dict[str, Callable[[float, float], float]] = {
    "linear": linear_degradation,
}


def degradation_factor(alpha: float, k: float, form: str = "linear") -> float:
    """Bandwidth-sharing degradation ``f(alpha, k)``; ``f(alpha, 1) == 1``."""
    if k < 0:
        raise ModelError(f"contention k must be >= 0, got {k}")
    if alpha < 0:
        raise ModelError(f"alpha must be >= 0, got {alpha}")
    return DEGRADATION_FORMS[form](alpha, k)


def _bandwidth(n_servers: int, k: float, cluster: ClusterSpec) -> float:
    if n_servers <= 1:
        return cluster.intra_bandwidth
    f = degradation_factor(cluster.degradation_alpha, max(k, 1.0), cluster.degradation)
    return cluster.inter_bandwidth / f


def bottleneck_bandwidth(placement: Placement, k: float, cluster: ClusterSpec) -> float:
    return _bandwidth(placement.num_servers, k, cluster)


def rar_traffic_volume(workers: int, gradient_dim: float) -> float:
    """Data received by any worker during one ring-all-reduce: ``2d(w-1)/w``."""
    if workers < 1:
        raise ModelError("ring needs at least one worker")
    return 2.0 * gradient_dim * (workers - 1) / workers


def iteration_time(job: JobSpec, n_servers: int, k: float, cluster: ClusterSpec,
                   eta=(1.0, 1.0, 1.0)) -> float:
    """Per-iteration time from the server count and effective contention ``k``.

    ``eta`` scales (FP, BP, communication); the overhead term is never scaled.
    """
    w = job.gpus_requested
    if w < 1:
        raise ModelError("per-iteration time needs w >= 1")
    eta_f, eta_b, eta_c = eta
    exchange = rar_traffic_volume(w, job.gradient_size) / _bandwidth(n_servers, k, cluster)
    reduction = job.gradient_size * (w - 1) / w / cluster.gpu_speed
    overhead = cluster.overhead_per_server * max(n_servers, 1)
    return (eta_c * exchange + eta_c * reduction + overhead
            + eta_f * (job.fp_per_sample * job.minibatch) + eta_b * job.bp_time)


def per_iteration_time(job: JobSpec, placement: Placement, k: float, cluster: ClusterSpec) -> float:
    if placement.workers == 0:
        raise ModelError("placement has no workers")
    return iteration_time(job, placement.num_servers, k, cluster)


def training_speed(tau: float) -> int:
    """Whole iterations completed in one slot, ``floor(1/tau)``."""
    if not tau > 0:
        raise ModelError(f"per-iteration time must be positive, got {tau}")
    return int(math.floor(1.0 / tau + EPS))


def completion_time(start: int, speeds: Iterable[int], iterations: int) -> int:
    """Slot in which the cumulative iteration count first reaches ``iterations``."""
    done = 0
    for n, phi in enumerate(speeds):
        done += phi
        if done >= iterations:
            return start + n
    raise HorizonExceeded(f"{done} of {iterations} iterations completed within the horizon")


def solo_duration(job: JobSpec, tau: float) -> float:
    """Slots needed at a constant per-iteration time ``tau`` (inf when it stalls)."""
    phi = training_speed(tau)
    if phi == 0:
        return math.inf
    return math.ceil(job.iterations / phi)


# --------------------------------------------------------------------------
# schedule validation


@dataclass(frozen=True)
class Violation:
    constraint: str
    job: int | None = None
    server: int | None = None
    slot: int | None = None
    detail: str = ""

    def __str__(self):
        where = ", ".join(f"{k}={v}" for k, v in
                          (("job", self.job), ("server", self.server), ("slot", self.slot))
                          if v is not None)
        return f"[{self.constraint}] {where}: {self.detail}"


def validate_schedule(schedule, jobs: Sequence[JobSpec] | Mapping[int, JobSpec],
                      cluster: ClusterSpec, horizon: int | None = None) -> list:
    """Return every violated gang-scheduling constraint; empty means feasible.

    ``schedule`` is a :class:`Schedule` or a raw occupancy grid
    ``{job: {slot: {server: count}}}``.  GPU-level exclusivity is checked too
    when a :class:`Schedule` is given.
    """
    jobs_by_id = jobs if isinstance(jobs, Mapping) else {j.id: j for j in jobs}
    horizon = cluster.slot_count if horizon is None else horizon
    violations = []

    if isinstance(schedule, Schedule):
        occupancy = schedule.occupancy()
        violations.extend(_check_gpu_level(schedule, jobs_by_id, cluster))
    else:
        occupancy = schedule

    load = defaultdict(int)
    for j, grid in occupancy.items():
        job = jobs_by_id.get(j)
        if job is None:
            violations.append(Violation("unknown-job", job=j, detail="no such job"))
            continue
        slots = sorted(t for t, counts in grid.items() if sum(counts.values()) > 0)
        if not slots:
            violations.append(Violation("never-runs", job=j, detail="job never runs"))
            continue
        first, last = slots[0], slots[-1]
        if first < 1 or last > horizon:
            violations.append(Violation("horizon", job=j, slot=first if first < 1 else last,
                                        detail=f"active interval [{first},{last}] outside [1,{horizon}]"))
        prev = None
        for t in range(first, last + 1):
            counts = {s: y for s, y in grid.get(t, {}).items() if y != 0}
            total = sum(counts.values())
            if total == 0:
                violations.append(Violation("gap", job=j, slot=t, detail="no GPUs inside active interval"))
            elif total != job.gpus_requested:
                violations.append(Violation("gang-size", job=j, slot=t,
                                            detail=f"{total} GPUs allocated, {job.gpus_requested} requested"))
            for s, y in counts.items():
                if y < 0 or int(y) != y:
                    violations.append(Violation("allocation", job=j, server=s, slot=t,
                                                detail=f"allocation {y} is not a nonnegative integer"))
                if not 0 <= s < cluster.num_servers:
                    violations.append(Violation("server", job=j, server=s, slot=t, detail="no such server"))
                else:
                    load[s, t] += y
            if prev is not None and counts != prev:
                violations.append(Violation("preemption", job=j, slot=t, detail="placement changed while running"))
            prev = counts
        for t, counts in grid.items():
            if (t < first or t > last) and any(counts.values()):
                violations.append(Violation("outside-interval", job=j, slot=t, detail="allocation outside active interval"))

    for (s, t), used in sorted(load.items()):
        if used > cluster.server_capacities[s]:
            violations.append(Violation("capacity", server=s, slot=t,
                                        detail=f"{used} GPUs used, capacity {cluster.server_capacities[s]}"))
    return violations


def _check_gpu_level(schedule: Schedule, jobs_by_id, cluster: ClusterSpec):
    out = []
    per_gpu = defaultdict(list)
    for j, e in schedule.entries.items():
        if e.end < e.start:
            out.append(Violation("interval", job=j, detail=f"end {e.end} before start {e.start}"))
        for s, g in e.placement.gpus:
            if 0 <= s < cluster.num_servers and not 0 <= g < cluster.server_capacities[s]:
                out.append(Violation("gpu", job=j, server=s, detail=f"GPU index {g} out of range"))
            per_gpu[s, g].append((e.start, e.end, j))
    for (s, g), spans in sorted(per_gpu.items()):
        spans.sort()
        for (a0, b0, j0), (a1, b1, j1) in zip(spans, spans[1:]):
            if a1 <= b0:
                out.append(Violation("gpu-exclusive", job=j1, server=s, slot=a1,
                                     detail=f"GPU {g} also held by job {j0}"))
    return out
