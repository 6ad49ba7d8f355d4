"""SJF-BCO: smallest-job-first planning with bisection on a per-GPU load limit.

Each job is charged ``d_j = ceil(rho_hat_j / u)`` whole slots on every GPU it
uses.  A pass places jobs one by one under a load limit ``theta``; a job is
placed at the earliest slot, not before the previous job's start, at which
enough GPUs that can still absorb ``d_j`` are idle, which is the offline
equivalent of waiting for running jobs to exit.  The outer loop bisects ``theta`` over ``[1, T]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .model import (
    ClusterSpec, JobSpec, Schedule, degradation_factor, iteration_time, training_speed,
)

INF = math.inf


class GpuLoadBook:
    """Per-GPU accumulated load (slots) and the next slot each GPU is free."""

    def __init__(self, capacities: Sequence[int]):
        self.capacities = tuple(int(c) for c in capacities)
        self.server_of = np.repeat(np.arange(len(self.capacities)), self.capacities)
        self.gpu_of = np.concatenate([np.arange(c) for c in self.capacities])
        self.offsets = np.concatenate([[0], np.cumsum(self.capacities)])
        n = len(self.server_of)
        self.load = np.zeros(n, dtype=np.int64)
        self.free = np.ones(n, dtype=np.int64)
        # planning clock: no job may start before it
        self.clock = 1

    def __len__(self):
        return len(self.load)

    def copy(self):
        other = object.__new__(GpuLoadBook)
        other.capacities = self.capacities
        other.server_of, other.gpu_of, other.offsets = self.server_of, self.gpu_of, self.offsets
        other.load = self.load.copy()
        other.free = self.free.copy()
        other.clock = self.clock
        return other

    def pairs(self, idx):
        return [(int(self.server_of[i]), int(self.gpu_of[i])) for i in idx]

    def server_mean_load(self):
        sums = np.add.reduceat(self.load, self.offsets[:-1])
        return sums / np.asarray(self.capacities)


def _earliest_start(book: GpuLoadBook, pool: np.ndarray, g: int):
    """Earliest slot, not before the clock, at which ``g`` GPUs of ``pool`` are idle, or None."""
    if len(pool) < g:
        return None
    return max(book.clock, int(np.partition(book.free[pool], g - 1)[g - 1]))


def _pick_least_loaded(book: GpuLoadBook, pool: np.ndarray, g: int):
    # stable sort on load keeps the pool order for ties
    order = np.argsort(book.load[pool], kind="stable")
    return pool[order[:g]]


def fa_ffp(job: JobSpec, book: GpuLoadBook, theta: int, duration: int):
    """Fragment-aware first-fit packing.  Returns ``(gpu indices, start)`` or None."""
    g = job.gpus_requested
    eligible = np.flatnonzero(book.load + duration <= theta)
    start = _earliest_start(book, eligible, g)
    if start is None:
        return None
    idle = eligible[book.free[eligible] <= start]
    return _pick_least_loaded(book, idle, g), start


def lbsgf(job: JobSpec, book: GpuLoadBook, theta: int, duration: int, spread: float | None = None,
          pick: str = "list"):
    """Least-busy server-GPU first.  ``spread`` overrides the job's own factor.

    The candidate list holds the selected servers in least-busy order, each
    server's GPUs by load.  ``pick="list"`` takes the first idle GPUs of that
    list; ``pick="load"`` takes the least-loaded idle GPUs anywhere in it.
    """
    g = job.gpus_requested
    lam = job.server_spread_factor if spread is None else spread
    means = book.server_mean_load()
    servers = np.lexsort((np.arange(len(means)), means))
    caps = np.asarray(book.capacities)[servers]
    reach = np.searchsorted(np.cumsum(caps), lam * g - 1e-9)
    chosen = servers[:min(reach + 1, len(servers))]
    pool = []
    for s in chosen:
        lo, hi = book.offsets[s], book.offsets[s + 1]
        idx = np.arange(lo, hi)
        idx = idx[book.load[idx] + duration <= theta]
        pool.append(idx[np.argsort(book.load[idx], kind="stable")])
    pool = np.concatenate(pool) if pool else np.array([], dtype=np.int64)
    start = _earliest_start(book, pool, g)
    if start is None:
        return None
    idle = pool[book.free[pool] <= start]
    if pick == "list":
        return idle[:g], start
    return _pick_least_loaded(book, idle, g), start


# --------------------------------------------------------------------------
# execution-time estimates


@dataclass
class ExecutionEstimate:
    rho_hat: dict
    u: float
    l: float
    varphi_ratio: float
    rho_min: dict = field(default_factory=dict)
    rho_max: dict = field(default_factory=dict)

    def duration(self, job_id) -> int:
        """Whole slots charged to each GPU of the job."""
        return max(1, int(math.ceil(self.rho_hat[job_id] / self.u - 1e-9)))


def execution_time_bounds(job: JobSpec, cluster: ClusterSpec):
    """Per-iteration time at the best and worst placements: ``(tau_min, tau_max)``.

    Best: one server, intra-server bandwidth.  Worst: as many servers as the
    job can span with contention from every GPU of the largest server.
    """
    tau_min = iteration_time(job, 1, 0.0, cluster)
    spread = min(job.gpus_requested, cluster.num_servers)
    if spread <= 1:
        tau_max = tau_min
    else:
        k = cluster.contention_fraction * max(cluster.server_capacities)
        tau_max = iteration_time(job, spread, k, cluster)
    return tau_min, tau_max


def slot_duration(iterations: int, tau: float) -> float:
    phi = training_speed(tau)
    return INF if phi == 0 else float(math.ceil(iterations / phi))


def estimate_execution(job: JobSpec, bounds, mode: str = "midpoint", rng=None, value_range=None) -> float:
    """Estimated execution time rho_hat in slots."""
    tau_min, tau_max = bounds
    if mode == "midpoint":
        return job.iterations * 0.5 * (tau_min + tau_max)
    if mode == "solo":
        return job.iterations * tau_min
    if mode == "uniform":
        lo, hi = value_range
        return float(rng.uniform(lo, hi))
    raise ValueError(f"unknown estimate mode {mode!r}")


def build_estimates(jobs: Sequence[JobSpec], cluster: ClusterSpec, mode: str = "midpoint",
                    rng=None, value_range=None) -> ExecutionEstimate:
    rho_hat, rho_min, rho_max = {}, {}, {}
    for job in jobs:
        b = execution_time_bounds(job, cluster)
        rho_hat[job.id] = estimate_execution(job, b, mode, rng, value_range)
        rho_min[job.id] = slot_duration(job.iterations, b[0])
        rho_max[job.id] = slot_duration(job.iterations, b[1])
    return estimate_from_values(rho_hat, rho_min, rho_max)


def estimate_from_values(rho_hat: Mapping, rho_min: Mapping, rho_max: Mapping) -> ExecutionEstimate:
    if not rho_hat:
        return ExecutionEstimate({}, 1.0, 1.0, 1.0)
    u = max(1.0, max(rho_hat[j] / rho_min[j] for j in rho_hat))
    l = min(1.0, min(rho_hat[j] / rho_max[j] for j in rho_hat))
    varphi = max(rho_max[j] / rho_min[j] for j in rho_hat)
    return ExecutionEstimate(dict(rho_hat), u, l, varphi, dict(rho_min), dict(rho_max))


# --------------------------------------------------------------------------
# passes and bisection


class PlacementDurations:
    """Run length in slots of a job on ``n_servers`` servers with contention degree ``p``.

    Cached per (job, server count, p).
    """

    def __init__(self, cluster: ClusterSpec):
        self.cluster = cluster
        self._cache = {}

    def __call__(self, job: JobSpec, n_servers: int, p: int = 1) -> float:
        key = (job.id, n_servers, p)
        if key not in self._cache:
            k = self.cluster.contention_fraction * p if n_servers > 1 else 0.0
            self._cache[key] = slot_duration(job.iterations, iteration_time(job, n_servers, k, self.cluster))
        return self._cache[key]


class _SpanLedger:
    """Planned intervals and servers of spanning jobs, for contention lookups."""

    def __init__(self, n_jobs: int, n_servers: int):
        self.start = np.zeros(n_jobs, dtype=np.int64)
        self.end = np.zeros(n_jobs, dtype=np.int64)
        self.servers = np.zeros((n_jobs, n_servers), dtype=bool)
        self.n = 0

    def degree(self, own: np.ndarray, start: int, end: float) -> int:
        """1 + the most planned spanning jobs overlapping [start, end] on one of ``own``."""
        if self.n == 0:
            return 1
        live = (self.start[:self.n] <= end) & (self.end[:self.n] >= start)
        if not live.any():
            return 1
        counts = self.servers[:self.n][live][:, own].sum(axis=0)
        return 1 + int(counts.max())

    def add(self, own, start, end):
        self.start[self.n], self.end[self.n] = start, end
        self.servers[self.n, own] = True
        self.n += 1


def _contended_hold(job, own, start, occupancy, spans, rounds=4):
    """Run length once the contention from already planned overlapping jobs is counted."""
    p = 1
    hold = occupancy(job, len(own), p)
    for _ in range(rounds):
        if not math.isfinite(hold):
            break
        q = spans.degree(own, start, start + hold - 1)
        if q == p:
            break
        p = q
        hold = occupancy(job, len(own), p)
    return hold


@dataclass
class PassResult:
    makespan: float
    schedule: Schedule
    book: GpuLoadBook
    complete: bool


Placer = Callable[[JobSpec, GpuLoadBook, int, int], "tuple | None"]


def run_pass(order: Sequence[JobSpec], cluster: ClusterSpec, estimates: ExecutionEstimate,
             theta: int, horizon: int, choose_placer: Callable[[JobSpec], Placer],
             occupancy: PlacementDurations | None = None, backfill: bool = False) -> PassResult:
    """Place jobs in ``order``; stops at the first job that cannot be placed.

    Waiting for running jobs to exit advances a clock shared by the whole
    pass, so start slots never decrease along ``order``.  ``backfill``
    restarts the clock at slot 1 for every job instead.

    Every GPU of a job is charged ``estimates.duration`` against ``theta``.
    The job holds its GPUs for that long too, unless ``occupancy`` is given,
    in which case the hold time is the model's run length on the chosen
    servers.
    """
    book = GpuLoadBook(cluster.server_capacities)
    schedule = Schedule()
    spans = _SpanLedger(len(order), cluster.num_servers) if occupancy is not None else None
    makespan = 0
    for job in order:
        d = estimates.duration(job.id)
        got = choose_placer(job)(job, book, theta, d)
        if got is None:
            return PassResult(INF, schedule, book, False)
        idx, start = got
        hold = d
        if occupancy is not None:
            own = np.unique(book.server_of[idx])
            if len(own) > 1:
                hold = _contended_hold(job, own, start, occupancy, spans)
            else:
                hold = occupancy(job, 1)
        end = start + hold - 1
        if not math.isfinite(end) or end > horizon:
            return PassResult(INF, schedule, book, False)
        hold = int(hold)
        if occupancy is not None and len(own) > 1:
            spans.add(own, start, end)
        if not backfill:
            book.clock = start
        book.load[idx] += d
        book.free[idx] = start + hold
        schedule.add(job.id, start, int(end), book.pairs(idx))
        makespan = max(makespan, end)
    return PassResult(makespan, schedule, book, True)


@dataclass
class SchedulerResult:
    makespan: int
    schedule: Schedule
    theta: int | None
    kappa: int | None
    infeasible: bool
    trace: list = field(default_factory=list)
    max_load: int = 0
    # when nothing fits the horizon: an untruncated schedule, for reporting only
    fallback: Schedule | None = None


def fallback_schedule(run_at) -> Schedule | None:
    """Complete schedule ignoring the horizon; ``run_at(theta, horizon)`` gives a PassResult."""
    for theta in (None, 2 ** 62):
        res = run_at(theta, INF)
        if res.complete:
            return res.schedule
    return None


def bisect_theta(horizon: int, evaluate: Callable[[int], tuple]):
    """Integer bisection over ``[1, horizon]`` with strict-improvement acceptance.

    ``evaluate(theta)`` returns ``(makespan, payload)``; a failed pass returns
    an infinite makespan.  Returns ``(best makespan, payload, theta, visited)``
    with ``theta`` the last accepted limit (None if nothing was accepted).
    """
    best, payload, best_theta = INF, None, None
    left, right = 1, horizon
    visited = []
    while left <= right:
        theta = (left + right) // 2
        m_theta, p = evaluate(theta)
        visited.append((theta, m_theta))
        if m_theta < best:
            best, payload, best_theta = m_theta, p, theta
            right = theta - 1
        else:
            left = theta + 1
    return best, payload, best_theta, visited


def effective_kappa(kappa: int, sizes: Sequence[int]) -> int:
    """Largest job size not above ``kappa``; passes with equal values coincide."""
    below = [g for g in sizes if g <= kappa]
    return max(below) if below else 0


def sjf_bco(jobs: Sequence[JobSpec], cluster: ClusterSpec, horizon: int | None = None,
            estimates: ExecutionEstimate | None = None, kappas: Sequence[int] | None = None,
            spread: float | None = None, placement_aware: bool = True) -> SchedulerResult:
    """Run SJF-BCO.

    ``kappas`` pins the threshold values tried at each limit (default
    ``1..max G``); ``spread`` overrides every job's server spread factor.
    With ``placement_aware`` a job's completion slot comes from the model on
    its chosen servers; otherwise it is ``start + duration - 1``.
    """
    horizon = cluster.slot_count if horizon is None else horizon
    if not jobs:
        return SchedulerResult(0, Schedule(), None, None, False)
    if estimates is None:
        estimates = build_estimates(jobs, cluster)
    order = sorted(jobs, key=lambda j: (j.gpus_requested, j.id))
    occupancy = PlacementDurations(cluster) if placement_aware else None
    sizes = [j.gpus_requested for j in jobs]
    kappas = list(range(1, max(sizes) + 1)) if kappas is None else list(kappas)
    trace = []

    def place_ffp(job, book, theta, d):
        return fa_ffp(job, book, theta, d)

    def place_lbsgf(job, book, theta, d):
        return lbsgf(job, book, theta, d, spread)

    def evaluate(theta):
        memo = {}
        best = (INF, None, None)
        for kappa in kappas:
            key = effective_kappa(kappa, sizes)
            if key not in memo:
                memo[key] = run_pass(order, cluster, estimates, theta, horizon,
                                     lambda j: place_ffp if j.gpus_requested <= key else place_lbsgf,
                                     occupancy)
            res = memo[key]
            trace.append((theta, kappa, res.makespan))
            if res.makespan < best[0]:
                best = (res.makespan, res, kappa)
        return best[0], best

    m, payload, theta, _ = bisect_theta(horizon, evaluate)
    if theta is None:
        def run_at(th, hz):
            th = horizon if th is None else th
            passes = [run_pass(order, cluster, estimates, th, hz,
                               lambda j, key=key: place_ffp if j.gpus_requested <= key else place_lbsgf, occupancy)
                      for key in sorted({effective_kappa(k, sizes) for k in kappas})]
            return min(passes, key=lambda r: r.makespan)
        return SchedulerResult(horizon, Schedule(), None, None, True, trace, fallback=fallback_schedule(run_at))
    _, res, kappa = payload
    return SchedulerResult(int(m), res.schedule, theta, kappa, False, trace, int(res.book.load.max()))
