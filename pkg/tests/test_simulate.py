import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rarsched.iteration import OverlapCoefficients
from rarsched.model import ClusterSpec, HorizonExceeded, Schedule, iteration_time, training_speed
from rarsched.planner import build_estimates, estimate_from_values
from rarsched.simulate import (
    OracleTooLarge, approximation_report, brute_force_optimal, simulate,
)
from conftest import make_job, tiny_instance


def two_servers(T=200, xi2=0.1):
    return ClusterSpec(server_capacities=(2, 2), intra_bandwidth=100.0, inter_bandwidth=10.0, gpu_speed=50.0,
                       contention_fraction=1.0, overhead_per_server=xi2, degradation_alpha=0.5, slot_count=T)


def test_single_job_closed_form():
    c = two_servers()
    job = make_job(0, 2, f=100)
    s = Schedule()
    s.add(0, 3, 3, [(0, 0), (0, 1)])
    tr = simulate(s, [job], c)
    phi = training_speed(iteration_time(job, 1, 0.0, c))
    assert tr.ends[0] == 3 + math.ceil(100 / phi) - 1
    assert tr.makespan == tr.ends[0]


def test_colocated_jobs_see_no_contention():
    c = two_servers()
    s = Schedule()
    s.add(0, 1, 1, [(0, 0), (0, 1)])
    s.add(1, 1, 1, [(1, 0), (1, 1)])
    tr = simulate(s, [make_job(0, 2), make_job(1, 2)], c)
    assert all(r.p == 0 and r.k == 0 for r in tr.records)


def test_split_jobs_contend():
    c = two_servers()
    jobs = [make_job(0, 2), make_job(1, 2)]
    s = Schedule()
    s.add(0, 1, 1, [(0, 0), (1, 0)])
    s.add(1, 1, 1, [(0, 1), (1, 1)])
    tr = simulate(s, jobs, c)
    both = [r for r in tr.records if r.slot == 1]
    assert [r.p for r in both] == [2, 2]
    alone = iteration_time(jobs[0], 2, 1.0, c)
    assert all(r.tau > alone for r in both)


def test_pinned_durations():
    c = two_servers()
    s = Schedule()
    s.add(0, 1, 1, [(0, 0)])
    s.add(1, 1, 1, [(0, 0)])
    tr = simulate(s, [make_job(0, 1), make_job(1, 1)], c, durations={0: 4, 1: 3})
    assert tr.ends == {0: 4, 1: 7}


def test_horizon_exceeded_keeps_partial():
    c = two_servers(T=5)
    s = Schedule()
    s.add(0, 1, 1, [(0, 0)])
    with pytest.raises(HorizonExceeded) as exc:
        simulate(s, [make_job(0, 1, f=10 ** 6)], c)
    assert exc.value.partial is not None and exc.value.partial.records


def test_unit_coefficients_change_nothing():
    c = two_servers()
    jobs = [make_job(0, 2, fp=0.01), make_job(1, 2)]
    s = Schedule()
    s.add(0, 1, 1, [(0, 0), (1, 0)])
    s.add(1, 2, 2, [(0, 1), (1, 1)])
    a = simulate(s, jobs, c)
    b = simulate(s, jobs, c, coefficients=OverlapCoefficients(1.0, 1.0, 1.0))
    assert a.ends == b.ends and [r.tau for r in a.records] == [r.tau for r in b.records]


def test_equal_bandwidths_make_splitting_free():
    c = ClusterSpec(server_capacities=(2, 2), intra_bandwidth=100.0, inter_bandwidth=100.0 * (1 - 1e-12),
                    gpu_speed=50.0, contention_fraction=1.0, overhead_per_server=1e-12, degradation_alpha=0.5,
                    slot_count=10)
    job = make_job(0, 4)
    assert iteration_time(job, 2, 1.0, c) == pytest.approx(iteration_time(job, 1, 0.0, c), rel=1e-9)


def test_trace_csv(tmp_path):
    c = two_servers()
    s = Schedule()
    s.add(0, 1, 1, [(0, 0)])
    tr = simulate(s, [make_job(0, 1, f=30)], c)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("slot,job,p,k,tau,phi,cumulative")
    assert lines[-1].startswith("summary,makespan")
    assert len(lines) == len(tr.records) + 2


# ---------------------------------------------------------------- invariants

def disjoint_schedule(rng, n_jobs=4):
    caps = (4, 4, 4)
    gpus = [(s, g) for s in range(3) for g in range(4)]
    order = rng.permutation(len(gpus))
    jobs, s, used = [], Schedule(), 0
    for i in range(n_jobs):
        g = int(rng.integers(1, 4))
        if used + g > len(gpus):
            break
        pick = [gpus[k] for k in order[used:used + g]]
        used += g
        jobs.append(make_job(i, g, f=int(rng.integers(20, 200)), m=float(rng.uniform(0.1, 1))))
        s.add(i, int(rng.integers(1, 10)), 1, pick)
    c = ClusterSpec(server_capacities=caps, intra_bandwidth=100.0, inter_bandwidth=10.0, gpu_speed=50.0,
                    contention_fraction=0.5, overhead_per_server=0.01, degradation_alpha=0.5, slot_count=10 ** 5)
    return jobs, s, c


def taus(trace):
    out = {}
    for r in trace.records:
        out[(r.job, r.slot)] = r.tau
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_removing_a_job_never_slows_others(seed):
    rng = np.random.default_rng(seed)
    jobs, s, c = disjoint_schedule(rng)
    if len(jobs) < 2:
        return
    full = taus(simulate(s, jobs, c))
    drop = int(rng.integers(len(jobs)))
    rest = Schedule()
    for j, e in s.entries.items():
        if j != drop:
            rest.add(j, e.start, e.end, e.placement.gpus)
    reduced = taus(simulate(rest, [j for j in jobs if j.id != drop], c))
    for key, tau in reduced.items():
        if key in full:
            assert tau <= full[key] + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_relabelling_jobs_keeps_metrics(seed):
    rng = np.random.default_rng(seed)
    jobs, s, c = disjoint_schedule(rng)
    perm = rng.permutation(len(jobs)) + 100
    relabelled = [make_job(int(perm[j.id]), j.gpus_requested, f=j.iterations, m=j.gradient_size) for j in jobs]
    s2 = Schedule()
    for j, e in s.entries.items():
        s2.add(int(perm[j]), e.start, e.end, e.placement.gpus)
    a, b = simulate(s, jobs, c), simulate(s2, relabelled, c)
    assert a.makespan == b.makespan
    assert a.avg_jct == pytest.approx(b.avg_jct)
    assert sorted(a.ends.values()) == sorted(b.ends.values())


# ---------------------------------------------------------------- oracle

def test_oracle_single_job():
    c = two_servers(T=20)
    job = make_job(0, 2, f=60)
    best, sched = brute_force_optimal([job], c)
    assert len(sched.entries[0].placement.server_counts()) == 1
    assert simulate(sched, [job], c).makespan == best


def test_oracle_two_jobs_one_gpu():
    c = ClusterSpec(server_capacities=(1,), intra_bandwidth=100.0, inter_bandwidth=10.0, gpu_speed=50.0,
                    contention_fraction=1.0, overhead_per_server=0.1, degradation_alpha=0.5, slot_count=20)
    jobs = [make_job(0, 1, f=50), make_job(1, 1, f=70)]
    best, _ = brute_force_optimal(jobs, c)
    solo = [math.ceil(j.iterations / training_speed(iteration_time(j, 1, 0.0, c))) for j in jobs]
    assert best == sum(solo)


def test_oracle_prefers_colocation():
    c = two_servers(T=20)
    jobs = [make_job(0, 2, f=60), make_job(1, 2, f=60)]
    best, sched = brute_force_optimal(jobs, c)
    for e in sched.entries.values():
        assert len(e.placement.server_counts()) == 1


def test_oracle_caps():
    c = two_servers(T=21)
    with pytest.raises(OracleTooLarge):
        brute_force_optimal([make_job(0, 1)], c)
    with pytest.raises(OracleTooLarge):
        brute_force_optimal([make_job(i, 1) for i in range(4)], two_servers(T=20))


def test_oracle_reproduced_by_simulation():
    rng = np.random.default_rng(4)
    seen = 0
    for _ in range(30):
        jobs, c = tiny_instance(rng)
        try:
            best, sched = brute_force_optimal(jobs, c)
        except HorizonExceeded:
            continue
        seen += 1
        assert simulate(sched, jobs, c).makespan == best
    assert seen > 20


def test_approximation_report_flags():
    est = estimate_from_values({0: 5}, {0: 5}, {0: 5})
    ok = approximation_report(1, 10, 10, est)
    assert ok.ratio == 1.0 and ok.passed
    bad = approximation_report(1, 20, 10, est)
    assert bad.bound == 1.0 and not bad.passed


def test_approximation_bound_uses_estimates():
    jobs = [make_job(0, 2, f=50, m=0.05)]
    est = build_estimates(jobs, two_servers())
    rec = approximation_report(2, 1, 1, est)
    assert rec.bound == pytest.approx(2 * est.varphi_ratio * est.u / est.l)
