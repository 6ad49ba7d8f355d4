"""Synthetic workloads and clusters shaped after the scaled Microsoft trace.

A config is a flat ``key = value`` file; every key has a default, unknown
keys are rejected.  Randomness comes from two independent numpy streams per
seed, one for the cluster and one for the jobs, so the server-count sweep
sees prefixes of the same capacity vector.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .model import ClusterSpec, HorizonExceeded, JobSpec, iteration_time

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _histogram(text):
    out = {}
    for item in text.replace(",", " ").split():
        size, _, count = item.partition(":")
        out[int(size)] = int(count)
    return out


def _range(lo_hi):
    lo, hi = _floats(lo_hi)
    return lo, hi


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_DEFAULT_HIST = {1: 80, 2: 14, 4: 26, 8: 30, 16: 8, 32: 2}


@dataclass
class WorkloadConfig:
    histogram: dict = field(default_factory=lambda: dict(_DEFAULT_HIST))
    iterations_range: tuple = (1000, 6000)
    tau_range: tuple = (0.01, 0.05)
    rho_range: tuple = (50.0, 300.0)
    comm_share_range: tuple = (0.1, 0.4)
    fp_fraction: float = 1 / 3
    num_servers: int = 20
    capacity_choices: tuple = (4, 8, 16, 32)
    intra_bandwidth: float = 100.0
    inter_bandwidth: float = 25.0
    gpu_speed: float = 1000.0
    degradation_alpha: float = 0.5
    degradation: str = "linear"
    xi1: float = 1.0
    xi2: float = 0.002
    xi_linked: bool = False
    calibrate: bool = True
    contention_share: float = 0.15
    server_spread: float = 1.0
    estimate_mode: str = "solo"
    seeds: int = 20
    seed_base: int = 0
    horizon: int = 1200
    horizon_servers: int = 1500
    policies: tuple = ("sjf-bco", "ff", "ls", "rand")
    kappa_values: tuple = tuple(range(1, 33))
    server_ladder: tuple = (10, 12, 14, 16, 18, 20)
    lambda_values: tuple = (1.0, 2.0, 4.0, 8.0)
    record_runtime: bool = False

    def __post_init__(self):
        self.check()

    def check(self):
        if not self.histogram or any(g < 1 or c < 0 for g, c in self.histogram.items()):
            raise ConfigError("histogram needs positive sizes and nonnegative counts")
        for name in ("iterations_range", "tau_range", "rho_range", "comm_share_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name}: lower bound above upper bound")
        if not (0 <= self.comm_share_range[0] and self.comm_share_range[1] < 1):
            raise ConfigError("comm_share_range must lie in [0, 1)")
        if self.tau_range[0] <= 0 or self.iterations_range[0] < 1:
            raise ConfigError("tau and iteration ranges must be positive")
        if self.num_servers < 1 or not self.capacity_choices:
            raise ConfigError("need at least one server and one capacity choice")
        if self.horizon < 1 or self.horizon_servers < 1 or self.seeds < 1:
            raise ConfigError("horizon and seed count must be positive")
        if max(self.histogram) > max(self.capacity_choices) * self.num_servers:
            raise ConfigError("largest job cannot fit in any cluster of this size")
        if not 0 < self.contention_share < 1:
            raise ConfigError("contention_share must lie in (0, 1)")

    @property
    def num_jobs(self) -> int:
        return sum(self.histogram.values())

    def seed_list(self):
        return list(range(self.seed_base, self.seed_base + self.seeds))


_PARSERS = {
    "histogram": _histogram, "iterations_range": lambda t: tuple(int(v) for v in _floats(t)),
    "tau_range": _range, "rho_range": _range, "comm_share_range": _range,
    "capacity_choices": _ints, "kappa_values": _ints, "server_ladder": _ints,
    "lambda_values": _floats, "policies": lambda t: tuple(t.replace(",", " ").split()),
    "xi_linked": _bool, "calibrate": _bool, "record_runtime": _bool,
}


def parse_config(text: str, base: WorkloadConfig | None = None) -> WorkloadConfig:
    base = WorkloadConfig() if base is None else base
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _PARSERS[key](value) if key in _PARSERS else kinds[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return replace(base, **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> WorkloadConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


# --------------------------------------------------------------------------
# generation


def _rngs(seed):
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def generate_cluster(config: WorkloadConfig, seed: int, num_servers: int | None = None,
                     horizon: int | None = None, xi_scale: float = 1.0) -> ClusterSpec:
    """Cluster of ``num_servers`` (default from config) taken as a prefix of the seed's servers."""
    rng, _ = _rngs(seed)
    full = max(config.num_servers, num_servers or 0)
    caps = rng.choice(np.asarray(config.capacity_choices), size=full)
    n = config.num_servers if num_servers is None else num_servers
    xi1, xi2 = _scaled_xi(config, xi_scale)
    return ClusterSpec(
        server_capacities=tuple(int(c) for c in caps[:n]),
        intra_bandwidth=config.intra_bandwidth, inter_bandwidth=config.inter_bandwidth,
        gpu_speed=config.gpu_speed, contention_fraction=xi1, overhead_per_server=xi2,
        degradation_alpha=config.degradation_alpha,
        slot_count=config.horizon if horizon is None else horizon, degradation=config.degradation,
    )


def _scaled_xi(config, scale):
    xi1 = min(1.0, config.xi1 * scale)
    xi2 = xi1 if config.xi_linked else min(1.0, config.xi2 * scale)
    return max(xi1, 1e-12), max(xi2, 1e-12)


def generate_workload(config: WorkloadConfig, seed: int) -> list:
    """Jobs in submission order.

    Sizes follow the histogram (shuffled); F and the solo per-iteration time
    are drawn jointly by rejection so their product falls in ``rho_range``.
    The solo time is split into communication (intra-server ring all-reduce,
    a drawn share of it) and computation (FP and BP).
    """
    _, rng = _rngs(seed)
    sizes = np.repeat(np.array(sorted(config.histogram), dtype=int),
                      [config.histogram[g] for g in sorted(config.histogram)])
    rng.shuffle(sizes)
    f_lo, f_hi = config.iterations_range
    t_lo, t_hi = config.tau_range
    r_lo, r_hi = config.rho_range
    jobs = []
    for i, g in enumerate(sizes):
        for _ in range(10000):
            F = int(rng.integers(f_lo, f_hi + 1))
            tau0 = float(rng.uniform(t_lo, t_hi))
            if r_lo <= F * tau0 <= r_hi:
                break
        else:
            raise ConfigError("iteration, tau and rho ranges do not intersect")
        share = float(rng.uniform(*config.comm_share_range))
        w = max(int(g), 2)
        per_unit = (2.0 * (w - 1) / w) / config.intra_bandwidth + ((w - 1) / w) / config.gpu_speed
        m = max(share * tau0 / per_unit, 1e-9)
        comm = per_unit * m if g > 1 else 0.0
        compute = tau0 - comm
        jobs.append(JobSpec(
            id=i, gpus_requested=int(g), iterations=F, gradient_size=m, minibatch=1,
            fp_per_sample=compute * config.fp_fraction, bp_time=compute * (1 - config.fp_fraction),
            server_spread_factor=config.server_spread,
        ))
    return jobs


# --------------------------------------------------------------------------
# calibration


def contention_overhead_share(trace, jobs, cluster: ClusterSpec) -> float:
    """Fraction of simulated per-iteration time spent on contention and overhead.

    The reference time removes bandwidth degradation and the per-server
    overhead but keeps the plain inter-server bandwidth.
    """
    by_id = {j.id: j for j in jobs}
    plain = replace(cluster, degradation_alpha=0.0)
    total = extra = 0.0
    ref_cache = {}
    for r in trace.records:
        key = (r.job, r.p)
        if key not in ref_cache:
            job = by_id[r.job]
            ns = trace.server_count[r.job]
            ref = iteration_time(job, ns, 1.0 if ns > 1 else 0.0, plain) - cluster.overhead_per_server * ns
            ref_cache[key] = ref
        total += r.tau
        extra += r.tau - ref_cache[key]
    return extra / total if total > 0 else 0.0


def calibrate_xi(config: WorkloadConfig, seed: int, jobs=None, num_servers=None, steps: int = 12) -> float:
    """Largest shared xi scale in (0, 1/xi] whose pilot share stays within target.

    The pilot is a single list-scheduling pass at the horizon limit,
    simulated with the candidate coefficients.
    """
    from .baselines import ls_place
    from .planner import build_estimates, run_pass
    from .simulate import simulate

    jobs = generate_workload(config, seed) if jobs is None else jobs

    def share_at(scale):
        cl = generate_cluster(config, seed, num_servers, xi_scale=scale)
        est = build_estimates(jobs, cl, mode=config.estimate_mode)
        res = run_pass(jobs, cl, est, cl.slot_count * 4, cl.slot_count * 4, lambda j: ls_place)
        try:
            tr = simulate(res.schedule, jobs, cl, horizon=cl.slot_count * 4)
        except HorizonExceeded:
            return math.inf
        return contention_overhead_share(tr, jobs, cl)

    hi = 1.0 / max(config.xi1, config.xi2 if not config.xi_linked else config.xi1)
    if share_at(hi) <= config.contention_share:
        return hi
    lo = 0.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if share_at(mid) <= config.contention_share:
            lo = mid
        else:
            hi = mid
    log.info("seed %d: xi scale %.6g", seed, lo)
    return lo


def build_instance(config: WorkloadConfig, seed: int, num_servers=None, horizon=None):
    """Jobs and a calibrated cluster for one seed."""
    jobs = generate_workload(config, seed)
    scale = calibrate_xi(config, seed, jobs, num_servers) if config.calibrate else 1.0
    cluster = generate_cluster(config, seed, num_servers, horizon, xi_scale=scale)
    return jobs, cluster, scale
