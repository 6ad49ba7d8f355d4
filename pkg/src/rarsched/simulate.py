"""Slot-by-slot evaluation of a schedule under the contention model.

Planned start slots act as release times.  Each GPU serves its jobs in
planned-start order (ties by job id); a job starts at the first slot, not
before its release, at which every job ahead of it on any of its GPUs has
finished.  Per slot, the active set is fixed first; then contention, the
per-iteration time and the whole iterations done that slot are computed for
each active job.  A job finishing in slot t frees its GPUs from t + 1.

Also holds the exhaustive optimal-makespan oracle for tiny instances.
"""
from __future__ import annotations

import csv
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import (
    ClusterSpec, HorizonExceeded, JobSpec, ModelError, Schedule, iteration_time, training_speed,
)


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    job: int
    p: int
    k: float
    tau: float
    phi: int
    cumulative: int


@dataclass
class SimTrace:
    starts: dict
    ends: dict
    records: list = field(default_factory=list)
    server_count: dict = field(default_factory=dict)

    @property
    def makespan(self) -> int:
        return max(self.ends.values(), default=0)

    @property
    def avg_jct(self) -> float:
        if not self.ends:
            return 0.0
        return float(np.mean([self.ends[j] - self.starts[j] + 1 for j in self.ends]))

    @property
    def avg_completion(self) -> float:
        return float(np.mean(list(self.ends.values()))) if self.ends else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "job", "p", "k", "tau", "phi", "cumulative"])
            for r in self.records:
                w.writerow([r.slot, r.job, r.p, f"{r.k:.6g}", f"{r.tau:.9g}", r.phi, r.cumulative])
            w.writerow(["summary", "makespan", self.makespan, "avg_jct", f"{self.avg_jct:.6f}",
                        "avg_completion", f"{self.avg_completion:.6f}"])


def _gpu_queues(schedule: Schedule):
    order = sorted(schedule.entries, key=lambda j: (schedule.entries[j].start, j))
    ahead = {j: set() for j in order}
    last_on = {}
    for j in order:
        for gpu in schedule.entries[j].placement.gpus:
            if gpu in last_on:
                ahead[j].add(last_on[gpu])
            last_on[gpu] = j
    return order, ahead


def simulate(schedule: Schedule, jobs: Sequence[JobSpec] | Mapping[int, JobSpec], cluster: ClusterSpec,
             coefficients=None, horizon: int | None = None, durations: Mapping[int, int] | None = None,
             record: bool = True) -> SimTrace:
    """Evaluate ``schedule``; ``durations`` pins per-job run lengths in slots."""
    jobs_by_id = jobs if isinstance(jobs, Mapping) else {j.id: j for j in jobs}
    horizon = cluster.slot_count if horizon is None else horizon
    eta = (1.0, 1.0, 1.0) if coefficients is None else coefficients.as_tuple()
    xi1 = cluster.contention_fraction

    order, ahead = _gpu_queues(schedule)
    servers = {j: tuple(schedule.entries[j].placement.server_counts()) for j in order}
    spans = {j: len(servers[j]) > 1 for j in order}
    for j in order:
        if schedule.entries[j].placement.workers != jobs_by_id[j].gpus_requested:
            raise ModelError(f"job {j}: placement size differs from gpus_requested")
    tau_cache = {}

    pending = list(order)
    running, done = [], {}
    starts, progress = {}, defaultdict(int)
    trace = SimTrace(starts, done, server_count={j: len(servers[j]) for j in order})
    t = 0
    while pending or running:
        t += 1
        if t > horizon:
            raise HorizonExceeded(f"{len(pending) + len(running)} jobs unfinished at slot {horizon}",
                                  partial=trace)
        started = False
        still = []
        for j in pending:
            if schedule.entries[j].start <= t and all(p in done for p in ahead[j]):
                starts[j] = t
                running.append(j)
                started = True
            else:
                still.append(j)
        pending = still
        if not running:
            continue

        per_server = defaultdict(int)
        for j in running:
            if spans[j]:
                for s in servers[j]:
                    per_server[s] += 1
        finished = []
        moved = False
        for j in running:
            job = jobs_by_id[j]
            p = max(per_server[s] for s in servers[j]) if spans[j] else 0
            key = (j, p)
            if key not in tau_cache:
                tau = iteration_time(job, len(servers[j]), xi1 * p, cluster, eta)
                tau_cache[key] = (tau, training_speed(tau))
            tau, phi = tau_cache[key]
            progress[j] = min(job.iterations, progress[j] + phi)
            moved = moved or phi > 0
            if record:
                trace.records.append(SlotRecord(t, j, p, xi1 * p, tau, phi, progress[j]))
            if durations is not None:
                if t - starts[j] + 1 >= durations[j]:
                    finished.append(j)
            elif progress[j] >= job.iterations:
                finished.append(j)
        for j in finished:
            done[j] = t
            running.remove(j)
        if not (moved or started or finished) and durations is None \
                and all(schedule.entries[j].start <= t for j in pending):
            # nothing can change any more: every running job is stalled by the others
            raise HorizonExceeded(f"{len(running)} running jobs stalled at slot {t}", partial=trace)
    return trace


# --------------------------------------------------------------------------
# exhaustive oracle


class OracleTooLarge(ValueError):
    pass


ORACLE_CAPS = dict(jobs=3, servers=2, gpus=8, horizon=20)


def _count_vectors(g: int, caps: Sequence[int]):
    out = []
    for combo in itertools.product(*(range(min(g, c) + 1) for c in caps)):
        if sum(combo) == g:
            out.append(combo)
    return out


def _evaluate_fixed(jobs, caps, cluster, starts, counts, horizon, bound):
    """Ends of jobs run from fixed starts on fixed per-server counts, or None.

    None when a slot's server capacity is exceeded, a job stalls past the
    horizon, or the makespan cannot beat ``bound``.
    """
    n = len(jobs)
    ends = [None] * n
    progress = [0] * n
    nserv = [sum(1 for c in cv if c > 0) for cv in counts]
    t = min(starts)
    while any(e is None for e in ends):
        if t > horizon or t >= bound:
            return None
        active = [i for i in range(n) if starts[i] <= t and ends[i] is None]
        used = [0] * len(caps)
        spanning = [0] * len(caps)
        for i in active:
            for s, c in enumerate(counts[i]):
                used[s] += c
                if c and nserv[i] > 1:
                    spanning[s] += 1
        if any(u > c for u, c in zip(used, caps)):
            return None
        for i in active:
            p = max((spanning[s] for s, c in enumerate(counts[i]) if c), default=0) if nserv[i] > 1 else 0
            tau = iteration_time(jobs[i], nserv[i], cluster.contention_fraction * p, cluster)
            progress[i] += training_speed(tau)
            if progress[i] >= jobs[i].iterations:
                ends[i] = t
        t += 1
    return ends


def _assign_gpus(starts, ends, counts, caps):
    """Concrete GPU indices per job, interval-colouring each server in start order."""
    order = sorted(range(len(starts)), key=lambda i: (starts[i], i))
    busy_until = [[0] * c for c in caps]
    gpus = {i: [] for i in order}
    for i in order:
        for s, c in enumerate(counts[i]):
            free = [g for g in range(caps[s]) if busy_until[s][g] < starts[i]][:c]
            if len(free) < c:
                raise RuntimeError("capacity check passed but no GPUs left to assign")
            for g in free:
                busy_until[s][g] = ends[i]
                gpus[i].append((s, g))
    return gpus


def brute_force_optimal(jobs: Sequence[JobSpec], cluster: ClusterSpec, horizon: int | None = None):
    """Minimum makespan over every start slot and per-server split, with its schedule.

    Options are enumerated per job in lexicographic (start, split) order and
    the first schedule attaining the optimum is returned.
    """
    horizon = cluster.slot_count if horizon is None else horizon
    caps = cluster.server_capacities
    if (len(jobs) > ORACLE_CAPS["jobs"] or len(caps) > ORACLE_CAPS["servers"]
            or sum(caps) > ORACLE_CAPS["gpus"] or horizon > ORACLE_CAPS["horizon"]):
        raise OracleTooLarge(f"oracle caps are {ORACLE_CAPS}")
    jobs = list(jobs)
    if not jobs:
        return 0, Schedule()
    options, solo = [], []
    for job in jobs:
        vecs = _count_vectors(job.gpus_requested, caps)
        if not vecs:
            raise ModelError(f"job {job.id} does not fit the cluster")
        options.append(vecs)
        # fastest possible run: single server if it fits, else the fewest servers without contention
        fastest = math.inf
        for v in vecs:
            ns = sum(1 for c in v if c > 0)
            phi = training_speed(iteration_time(job, ns, cluster.contention_fraction if ns > 1 else 0.0, cluster))
            if phi > 0:
                fastest = min(fastest, math.ceil(job.iterations / phi))
        solo.append(fastest)

    best = [horizon + 1, None]
    n = len(jobs)

    def dfs(i, starts, counts):
        if i == n:
            ends = _evaluate_fixed(jobs, caps, cluster, starts, counts, horizon, best[0])
            if ends is not None and max(ends) < best[0]:
                best[0], best[1] = max(ends), (list(starts), list(counts), ends)
            return
        for a in range(1, horizon + 1):
            if a + solo[i] - 1 >= best[0]:
                break
            for v in options[i]:
                dfs(i + 1, starts + [a], counts + [v])

    dfs(0, [], [])
    if best[1] is None:
        raise HorizonExceeded("no schedule completes within the horizon")
    starts, counts, ends = best[1]
    gpus = _assign_gpus(starts, ends, counts, caps)
    schedule = Schedule()
    for i, job in enumerate(jobs):
        schedule.add(job.id, starts[i], ends[i], gpus[i])
    return best[0], schedule


@dataclass
class ApproximationRecord:
    ratio: float
    bound: float
    passed: bool


def approximation_report(n_g: int, alg_makespan: float, opt_makespan: float, estimates) -> ApproximationRecord:
    """Empirical ratio against the n_g * varphi * u / l guarantee."""
    ratio = alg_makespan / opt_makespan
    bound = n_g * estimates.varphi_ratio * estimates.u / estimates.l if estimates.l > 0 else math.inf
    return ApproximationRecord(ratio, bound, ratio <= bound + 1e-12)
