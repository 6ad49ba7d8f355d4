"""Comparison policies: first-fit (FF), list scheduling (LS) and random (RAND).

All three keep jobs in submission order and share the load book and the
earliest-start rule of the SJF-BCO planner.  FF and LS search their load
limit with the same bisection; RAND uses the horizon as its limit.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import ClusterSpec, JobSpec, Schedule
from .planner import (
    ExecutionEstimate, GpuLoadBook, PlacementDurations, SchedulerResult, _earliest_start, bisect_theta,
    build_estimates, fallback_schedule, run_pass,
)


def ff_place(job: JobSpec, book: GpuLoadBook, theta: int, duration: int):
    g = job.gpus_requested
    eligible = np.flatnonzero(book.load + duration <= theta)
    start = _earliest_start(book, eligible, g)
    if start is None:
        return None
    idle = eligible[book.free[eligible] <= start]
    return idle[:g], start


def ls_place(job: JobSpec, book: GpuLoadBook, theta: int, duration: int):
    g = job.gpus_requested
    eligible = np.flatnonzero(book.load + duration <= theta)
    start = _earliest_start(book, eligible, g)
    if start is None:
        return None
    idle = eligible[book.free[eligible] <= start]
    return idle[np.argsort(book.load[idle], kind="stable")[:g]], start


def make_random_placer(rng: np.random.Generator):
    def place(job, book, theta, duration):
        g = job.gpus_requested
        eligible = np.flatnonzero(book.load + duration <= theta)
        start = _earliest_start(book, eligible, g)
        if start is None:
            return None
        idle = eligible[book.free[eligible] <= start]
        return np.sort(rng.choice(idle, size=g, replace=False)), start
    return place


def _bisected(jobs, cluster, horizon, estimates, placer, placement_aware):
    horizon = cluster.slot_count if horizon is None else horizon
    if not jobs:
        return SchedulerResult(0, Schedule(), None, None, False)
    if estimates is None:
        estimates = build_estimates(jobs, cluster)
    trace = []
    occupancy = PlacementDurations(cluster) if placement_aware else None

    def evaluate(theta):
        res = run_pass(jobs, cluster, estimates, theta, horizon, lambda j: placer, occupancy)
        trace.append((theta, None, res.makespan))
        return res.makespan, res

    m, res, theta, _ = bisect_theta(horizon, evaluate)
    if theta is None:
        def run_at(th, hz):
            return run_pass(jobs, cluster, estimates, horizon if th is None else th, hz, lambda j: placer, occupancy)
        return SchedulerResult(horizon, Schedule(), None, None, True, trace, fallback=fallback_schedule(run_at))
    return SchedulerResult(int(m), res.schedule, theta, None, False, trace, int(res.book.load.max()))


def first_fit(jobs: Sequence[JobSpec], cluster: ClusterSpec, horizon: int | None = None,
              estimates: ExecutionEstimate | None = None, placement_aware: bool = True) -> SchedulerResult:
    return _bisected(jobs, cluster, horizon, estimates, ff_place, placement_aware)


def list_scheduling(jobs: Sequence[JobSpec], cluster: ClusterSpec, horizon: int | None = None,
                    estimates: ExecutionEstimate | None = None, placement_aware: bool = True) -> SchedulerResult:
    return _bisected(jobs, cluster, horizon, estimates, ls_place, placement_aware)


def random_policy(jobs: Sequence[JobSpec], cluster: ClusterSpec, seed: int = 0,
                  horizon: int | None = None, estimates: ExecutionEstimate | None = None,
                  placement_aware: bool = True) -> SchedulerResult:
    horizon = cluster.slot_count if horizon is None else horizon
    if not jobs:
        return SchedulerResult(0, Schedule(), None, None, False)
    if estimates is None:
        estimates = build_estimates(jobs, cluster)
    placer = make_random_placer(np.random.default_rng(seed))
    occupancy = PlacementDurations(cluster) if placement_aware else None
    res = run_pass(jobs, cluster, estimates, horizon, horizon, lambda j: placer, occupancy)
    trace = [(horizon, None, res.makespan)]
    if not res.complete:
        # replay the same random draws without the horizon cut for reporting
        placer = make_random_placer(np.random.default_rng(seed))

        def run_at(th, hz):
            return run_pass(jobs, cluster, estimates, horizon if th is None else th, hz, lambda j: placer, occupancy)
        return SchedulerResult(horizon, Schedule(), horizon, None, True, trace, fallback=fallback_schedule(run_at))
    return SchedulerResult(int(res.makespan), res.schedule, horizon, None, False, trace,
                           int(res.book.load.max()))


POLICIES = ("sjf-bco", "ff", "ls", "rand")
