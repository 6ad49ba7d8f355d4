"""Contention-aware scheduling and simulation of ring-all-reduce training jobs."""

from .model import (
    ClusterSpec, JobSpec, Placement, Schedule, ScheduleEntry, HorizonExceeded, ModelError,
    contention_degree, degradation_factor, bottleneck_bandwidth, per_iteration_time,
    training_speed, completion_time, rar_traffic_volume, validate_schedule,
)

__version__ = "0.1.0"
