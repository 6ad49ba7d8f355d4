"""Experiment drivers: policy comparison and the kappa, server-count and lambda sweeps.

Every schedule is replayed in the simulator to get the reported makespan and
JCT.  The replay runs up to four horizons so overlong schedules still get a
number; a row is flagged infeasible when the planner found no schedule or
the replayed makespan exceeds the horizon.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import first_fit, list_scheduling, random_policy
from .model import HorizonExceeded, Schedule
from .planner import build_estimates, sjf_bco
from .simulate import simulate
from .workload import WorkloadConfig, calibrate_xi, generate_cluster, generate_workload

COLUMNS = ["experiment", "policy", "seed", "sweep_param", "makespan_slots", "avg_jct_slots",
           "theta_u", "runtime_ms", "infeasible", "avg_completion_slot"]
KINDS = ("compare", "kappa", "servers", "lambda")
REPLAY_FACTOR = 4


@dataclass
class ExperimentRow:
    experiment: str
    policy: str
    seed: int
    sweep_param: object
    makespan_slots: int
    avg_jct_slots: float
    theta_u: object
    runtime_ms: object
    infeasible: bool
    avg_completion_slot: float

    def as_list(self):
        return [self.experiment, self.policy, self.seed, _fmt(self.sweep_param), self.makespan_slots,
                f"{self.avg_jct_slots:.4f}", "" if self.theta_u is None else self.theta_u,
                "" if self.runtime_ms is None else f"{self.runtime_ms:.1f}", int(self.infeasible),
                f"{self.avg_completion_slot:.4f}"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


@dataclass
class ExperimentReport:
    kind: str
    rows: list = field(default_factory=list)
    schedules: dict = field(default_factory=dict)
    instances: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.as_list())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self):
        """Mean makespan, mean JCT and infeasible count per (policy, sweep point)."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.policy, _fmt(r.sweep_param)), []).append(r)
        out = []
        for (policy, param), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], _sort_key(kv[0][1]))):
            out.append(dict(policy=policy, sweep_param=param, n=len(rows),
                            mean_makespan=float(np.mean([r.makespan_slots for r in rows])),
                            mean_jct=float(np.mean([r.avg_jct_slots for r in rows])),
                            infeasible=sum(r.infeasible for r in rows)))
        return out

    def summary_text(self):
        lines = [f"{'policy':<10}{'param':>8}{'n':>5}{'makespan':>12}{'avg_jct':>10}{'infeas':>8}"]
        for s in self.summary():
            lines.append(f"{s['policy']:<10}{s['sweep_param']:>8}{s['n']:>5}{s['mean_makespan']:>12.2f}"
                         f"{s['mean_jct']:>10.2f}{s['infeasible']:>8}")
        return "\n".join(lines)


def _sort_key(param):
    try:
        return (0, float(param))
    except ValueError:
        return (1, param)


def run_policy(policy, jobs, cluster, estimates, seed, horizon, kappas=None, spread=None):
    if policy == "sjf-bco":
        return sjf_bco(jobs, cluster, horizon, estimates, kappas=kappas, spread=spread)
    if policy == "ff":
        return first_fit(jobs, cluster, horizon, estimates)
    if policy == "ls":
        return list_scheduling(jobs, cluster, horizon, estimates)
    if policy == "rand":
        return random_policy(jobs, cluster, seed, horizon, estimates)
    raise ValueError(f"unknown policy {policy!r}")


def evaluate(result, jobs, cluster, horizon):
    """Replay a planner result; returns (makespan, avg_jct, avg_completion, infeasible)."""
    schedule = result.fallback if result.infeasible else result.schedule
    if schedule is None or len(schedule) < len(jobs):
        return horizon, 0.0, 0.0, True
    try:
        tr = simulate(schedule, jobs, cluster, horizon=REPLAY_FACTOR * horizon, record=False)
    except HorizonExceeded:
        return REPLAY_FACTOR * horizon, 0.0, 0.0, True
    return tr.makespan, tr.avg_jct, tr.avg_completion, result.infeasible or tr.makespan > horizon


class _Instances:
    """Per-seed jobs and calibrated xi scale, computed once."""

    def __init__(self, config):
        self.config = config
        self._cache = {}

    def get(self, seed):
        if seed not in self._cache:
            jobs = generate_workload(self.config, seed)
            scale = calibrate_xi(self.config, seed, jobs) if self.config.calibrate else 1.0
            self._cache[seed] = (jobs, scale)
        return self._cache[seed]


def run_experiment(kind: str, config: WorkloadConfig, seeds=None, policy=None) -> ExperimentReport:
    if kind not in KINDS:
        raise ValueError(f"unknown experiment {kind!r}")
    seeds = config.seed_list() if seeds is None else list(seeds)
    inst = _Instances(config)
    report = ExperimentReport(kind)

    def record(policy_name, seed, param, jobs, cluster, horizon, **kw):
        est = build_estimates(jobs, cluster, mode=config.estimate_mode)
        t0 = time.perf_counter()
        res = run_policy(policy_name, jobs, cluster, est, seed, horizon, **kw)
        elapsed = (time.perf_counter() - t0) * 1000.0
        ms, jct, comp, bad = evaluate(res, jobs, cluster, horizon)
        report.rows.append(ExperimentRow(kind, policy_name, seed, param, int(ms), jct, res.theta,
                                         elapsed if config.record_runtime else None, bad, comp))
        report.schedules[(policy_name, seed, _fmt(param))] = res.schedule
        report.instances[(seed, _fmt(param))] = (jobs, cluster)

    for seed in seeds:
        jobs, scale = inst.get(seed)
        if kind == "compare":
            cluster = generate_cluster(config, seed, horizon=config.horizon, xi_scale=scale)
            for p in ([policy] if policy else config.policies):
                record(p, seed, None, jobs, cluster, config.horizon)
        elif kind == "kappa":
            cluster = generate_cluster(config, seed, horizon=config.horizon, xi_scale=scale)
            for kappa in config.kappa_values:
                record("sjf-bco", seed, kappa, jobs, cluster, config.horizon, kappas=[kappa])
        elif kind == "servers":
            for n in config.server_ladder:
                cluster = generate_cluster(config, seed, num_servers=n, horizon=config.horizon_servers,
                                           xi_scale=scale)
                if max(j.gpus_requested for j in jobs) > cluster.total_gpus:
                    continue
                for p in ([policy] if policy else ("sjf-bco", "ff", "ls")):
                    record(p, seed, n, jobs, cluster, config.horizon_servers)
        elif kind == "lambda":
            cluster = generate_cluster(config, seed, horizon=config.horizon, xi_scale=scale)
            for lam in config.lambda_values:
                record("sjf-bco", seed, float(lam), jobs, cluster, config.horizon, kappas=[1], spread=float(lam))
    return report


# --------------------------------------------------------------------------
# schedule files


def write_schedule_csv(schedule: Schedule, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["job_id", "start", "end", "server", "gpu"])
        for j in sorted(schedule.entries):
            e = schedule.entries[j]
            for s, g in e.placement.gpus:
                w.writerow([j, e.start, e.end, s, g])


def read_schedule_csv(path) -> Schedule:
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            j = int(r["job_id"])
            start, end = int(r["start"]), int(r["end"])
            prev = rows.setdefault(j, [start, end, []])
            if (prev[0], prev[1]) != (start, end):
                raise ValueError(f"job {j}: inconsistent interval rows")
            prev[2].append((int(r["server"]), int(r["gpu"])))
    schedule = Schedule()
    for j, (start, end, gpus) in sorted(rows.items()):
        schedule.add(j, start, end, gpus)
    return schedule
