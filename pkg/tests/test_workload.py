from collections import Counter

import numpy as np
import pytest

from rarsched.model import iteration_time
from rarsched.workload import (
    ConfigError, WorkloadConfig, calibrate_xi, generate_cluster, generate_workload, load_config, parse_config,
)


def test_default_histogram():
    jobs = generate_workload(WorkloadConfig(), 0)
    assert len(jobs) == 160
    assert Counter(j.gpus_requested for j in jobs) == {1: 80, 2: 14, 4: 26, 8: 30, 16: 8, 32: 2}


def test_draw_ranges():
    cfg = WorkloadConfig()
    jobs = generate_workload(cfg, 3)
    cl = generate_cluster(cfg, 3)
    for j in jobs:
        assert 1000 <= j.iterations <= 6000
        tau0 = iteration_time(j, 1, 0.0, cl) - cl.overhead_per_server
        assert 0.01 - 1e-12 <= tau0 <= 0.05 + 1e-12
        assert 50 - 1e-9 <= j.iterations * tau0 <= 300 + 1e-9


def test_single_job_histogram():
    jobs = generate_workload(parse_config("histogram = 1:1"), 0)
    assert len(jobs) == 1 and jobs[0].gpus_requested == 1


def test_seeds_share_sizes_not_draws():
    cfg = WorkloadConfig()
    a, b = generate_workload(cfg, 0), generate_workload(cfg, 1)
    assert sorted(j.gpus_requested for j in a) == sorted(j.gpus_requested for j in b)
    assert [j.iterations for j in a] != [j.iterations for j in b]
    assert generate_workload(cfg, 0) == a


def test_cluster_defaults_and_prefixes():
    cfg = WorkloadConfig()
    full = generate_cluster(cfg, 7)
    assert full.num_servers == 20 and set(full.server_capacities) <= {4, 8, 16, 32}
    assert generate_cluster(cfg, 7) == full
    for n in (10, 14):
        assert generate_cluster(cfg, 7, num_servers=n).server_capacities == full.server_capacities[:n]


def test_config_parsing(tmp_path):
    text = """
    # comment
    histogram = 1:3, 2:1
    tau_range = 0.02 0.04
    xi_linked = true
    policies = sjf-bco, ff
    """
    cfg = parse_config(text)
    assert cfg.histogram == {1: 3, 2: 1} and cfg.tau_range == (0.02, 0.04)
    assert cfg.xi_linked is True and cfg.policies == ("sjf-bco", "ff")
    path = tmp_path / "c.cfg"
    path.write_text(text)
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", [
    "nonsense = 1", "tau_range = 0.05 0.01", "horizon = abc", "histogram = 0:1", "no equals sign",
    "contention_share = 1.5",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_linked_xi():
    cfg = parse_config("xi_linked = true\nxi1 = 0.3")
    cl = generate_cluster(cfg, 0)
    assert cl.contention_fraction == cl.overhead_per_server == pytest.approx(0.3)


def test_calibration_scale_in_range():
    cfg = parse_config("histogram = 1:10, 2:4, 4:4, 8:2\nnum_servers = 4\nhorizon = 400")
    scale = calibrate_xi(cfg, 0)
    assert 0 < scale <= 1.0 / cfg.xi1
    assert calibrate_xi(cfg, 0) == scale
