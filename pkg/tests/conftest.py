import numpy as np
import pytest

from rarsched.model import ClusterSpec, JobSpec


@pytest.fixture
def cluster():
    return ClusterSpec(server_capacities=(4, 4), intra_bandwidth=100.0, inter_bandwidth=10.0,
                       gpu_speed=50.0, contention_fraction=1.0, overhead_per_server=0.1,
                       degradation_alpha=0.5, slot_count=100)


def make_job(i, g, f=100, m=1.0, fp=0.0, bp=0.01, lam=1.0):
    return JobSpec(id=i, gpus_requested=g, iterations=f, gradient_size=m, minibatch=1,
                   fp_per_sample=fp, bp_time=bp, server_spread_factor=lam)


def small_instance(rng, max_jobs=8, max_servers=3, horizon=64, max_iterations=400):
    """Random planner instance: up to 3 servers of 1, 2 or 4 GPUs."""
    n_servers = int(rng.integers(1, max_servers + 1))
    caps = tuple(int(c) for c in rng.choice([1, 2, 4], size=n_servers))
    jobs = []
    for i in range(int(rng.integers(1, max_jobs + 1))):
        g = min(int(rng.choice([1, 1, 2, 4])), sum(caps))
        jobs.append(JobSpec(id=i, gpus_requested=g, iterations=int(rng.integers(5, max_iterations)),
                            gradient_size=float(rng.uniform(0.1, 2.0)), minibatch=1,
                            fp_per_sample=float(rng.uniform(0, 0.05)), bp_time=float(rng.uniform(0.01, 0.1))))
    cl = ClusterSpec(server_capacities=caps, intra_bandwidth=100.0, inter_bandwidth=20.0, gpu_speed=100.0,
                     contention_fraction=float(rng.uniform(0.1, 1)), overhead_per_server=0.01,
                     degradation_alpha=0.5, slot_count=horizon)
    return jobs, cl


def tiny_instance(rng, horizon=20):
    """Instance inside the brute-force oracle's limits."""
    n_servers = int(rng.integers(1, 3))
    caps = tuple(int(c) for c in rng.choice([1, 2, 4], size=n_servers))
    jobs = [JobSpec(id=i, gpus_requested=min(int(rng.choice([1, 1, 2, 3])), sum(caps)),
                    iterations=int(rng.integers(20, 120)), gradient_size=float(rng.uniform(0.1, 1)),
                    fp_per_sample=float(rng.uniform(0, 0.02)), bp_time=float(rng.uniform(0.02, 0.05)))
            for i in range(int(rng.integers(1, 4)))]
    cl = ClusterSpec(server_capacities=caps, intra_bandwidth=100.0, inter_bandwidth=20.0, gpu_speed=100.0,
                     contention_fraction=0.5, overhead_per_server=0.01, degradation_alpha=0.5,
                     slot_count=horizon)
    return jobs, cl


def random_ddljs(rng):
    """Placement program with up to 3 jobs and 3 servers; total capacity covers demand."""
    from rarsched.offline import DdljsInstance
    n_servers = int(rng.integers(1, 4))
    caps = rng.integers(1, 5, n_servers)
    gpus = rng.integers(1, 5, int(rng.integers(1, 4)))
    while gpus.sum() > caps.sum():
        caps[int(np.argmin(caps))] += 1
    n = gpus.size
    return DdljsInstance(gpus, rng.integers(1, 10, n), rng.uniform(0.1, 1, n), rng.uniform(0, 1, n), caps,
                         1.0, float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 0.9)))


def ring_received(w, d):
    """Per-worker volume received by an explicit ring all-reduce of a size-d vector.

    Tracks which workers' contributions each chunk holds through w-1
    scatter-reduce steps and w-1 all-gather steps, and checks that every
    worker ends with every chunk fully reduced.
    """
    if w == 1:
        return 0.0
    chunk = d / w
    held = [[{i} for _ in range(w)] for i in range(w)]    # held[worker][chunk]
    received = np.zeros(w)
    for t in range(w - 1):
        sends = [(i, (i - t) % w, set(held[i][(i - t) % w])) for i in range(w)]
        for i, c, part in sends:
            held[(i + 1) % w][c] |= part
            received[(i + 1) % w] += chunk
    for t in range(w - 1):
        sends = [(i, (i + 1 - t) % w, set(held[i][(i + 1 - t) % w])) for i in range(w)]
        for i, c, part in sends:
            held[(i + 1) % w][c] = part
            received[(i + 1) % w] += chunk
    everyone = set(range(w))
    assert all(h == everyone for row in held for h in row)
    assert np.allclose(received, received[0])
    return float(received[0])
