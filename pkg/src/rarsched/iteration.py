"""Per-layer iteration-time models: sequential, wait-free and priority-based.

Layers are indexed from 1 at the input.  BP runs from layer L down to 1, the
all-reduce of a layer can start once its BP is done, and the next iteration's
FP runs from layer 1 up to L.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClusterSpec, JobSpec, ModelError, Placement, iteration_time

MODELS = ("sequential", "wait_free", "priority")
ETA_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerProfile:
    fp_times: tuple
    bp_times: tuple
    comm_times: tuple

    def __post_init__(self):
        f, b, c = (tuple(float(v) for v in seq) for seq in (self.fp_times, self.bp_times, self.comm_times))
        if not (len(f) == len(b) == len(c)) or len(f) == 0:
            raise ModelError("fp, bp and comm sequences must have the same nonzero length")
        if min(f + b + c) < 0:
            raise ModelError("layer times must be nonnegative")
        object.__setattr__(self, "fp_times", f)
        object.__setattr__(self, "bp_times", b)
        object.__setattr__(self, "comm_times", c)

    @property
    def layers(self) -> int:
        return len(self.fp_times)

    @classmethod
    def from_file(cls, path):
        """Read whitespace-separated rows ``layer fp bp comm``; '#' starts a comment."""
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ModelError(f"expected 4 columns, got {len(parts)}: {line!r}")
                rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        rows.sort()
        if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
            raise ModelError("layer indices must be 1..L")
        return cls(tuple(r[1] for r in rows), tuple(r[2] for r in rows), tuple(r[3] for r in rows))


@dataclass(frozen=True)
class OverlapCoefficients:
    eta_fp: float = 1.0
    eta_bp: float = 1.0
    eta_comm: float = 1.0

    def __post_init__(self):
        for v in (self.eta_fp, self.eta_bp, self.eta_comm):
            if not 0 < v <= 1 + 1e-12:
                raise ModelError(f"overlap coefficients must lie in (0, 1], got {v}")

    def as_tuple(self):
        return (self.eta_fp, self.eta_bp, self.eta_comm)


# Each recursion is evaluated on vectors (fp, bp, comm) so that the value
# carried along is the critical-path decomposition of the time; the scalar
# time is the vector's sum.  max() keeps the argmax branch, the first
# argument winning ties.

def _pick(a, b):
    return a if a.sum() >= b.sum() else b


def _sequential(p: LayerProfile):
    return np.array([sum(p.fp_times), sum(p.bp_times), sum(p.comm_times)])


def _wait_free(p: LayerProfile):
    f, b, c = p.fp_times, p.bp_times, p.comm_times
    L = p.layers
    bp_suffix = np.cumsum(b[::-1])[::-1]
    psi = np.array([0.0, b[L - 1], 0.0])
    for i in range(L - 2, -1, -1):
        psi = _pick(np.array([0.0, bp_suffix[i], 0.0]), psi + np.array([0.0, 0.0, c[i + 1]]))
    phi = psi + np.array([0.0, 0.0, c[0]])
    for i in range(1, L):
        phi = phi + np.array([f[i - 1], 0.0, 0.0])
    return phi + np.array([f[L - 1], 0.0, 0.0])


def _priority(p: LayerProfile):
    f, b, c = p.fp_times, p.bp_times, p.comm_times
    L = p.layers
    bp_suffix = np.cumsum(b[::-1])[::-1]
    comm_prefix = np.cumsum(c)
    phi = np.array([0.0, bp_suffix[0], c[0]])
    for i in range(1, L):
        phi = _pick(phi + np.array([f[i - 1], 0.0, 0.0]),
                    np.array([0.0, bp_suffix[i], comm_prefix[i]]))
    return phi + np.array([f[L - 1], 0.0, 0.0])


_RECURSIONS = {"sequential": _sequential, "wait_free": _wait_free, "priority": _priority}


def sequential_iteration_time(profile: LayerProfile) -> float:
    return sum(profile.bp_times) + sum(profile.comm_times) + sum(profile.fp_times)


def wait_free_iteration_time(profile: LayerProfile) -> float:
    f, b, c = profile.fp_times, profile.bp_times, profile.comm_times
    L = profile.layers
    psi = [0.0] * L
    psi[L - 1] = b[L - 1]
    for i in range(L - 2, -1, -1):
        psi[i] = max(sum(b[i:]), psi[i + 1] + c[i + 1])
    phi = psi[0] + c[0]
    for i in range(1, L):
        phi = phi + f[i - 1]
    return phi + f[L - 1]


def priority_iteration_time(profile: LayerProfile) -> float:
    f, b, c = profile.fp_times, profile.bp_times, profile.comm_times
    L = profile.layers
    phi = c[0] + sum(b)
    for i in range(1, L):
        phi = max(phi + f[i - 1], sum(b[i:]) + sum(c[:i + 1]))
    return phi + f[L - 1]


def iteration_time_for(profile: LayerProfile, model: str) -> float:
    fn = {"sequential": sequential_iteration_time, "wait_free": wait_free_iteration_time,
          "priority": priority_iteration_time}
    if model not in fn:
        raise ValueError(f"unknown iteration model {model!r}")
    return fn[model](profile)


def unified_coefficients(profile: LayerProfile, model: str) -> OverlapCoefficients:
    """Overlap coefficients from the critical path of the model's recursion.

    The FP, BP and communication time lying on the critical path are divided
    by the corresponding totals, so ``eta_fp*sum(fp) + eta_bp*sum(bp) +
    eta_comm*sum(comm)`` reproduces the model's iteration time.  When a phase
    is empty or absent from the path the split is ambiguous; then FP and BP
    keep weight 1 and the whole overlap saving goes to ``eta_comm``, floored
    at ``ETA_FLOOR`` when communication is hidden completely.
    """
    if model not in _RECURSIONS:
        raise ValueError(f"unknown iteration model {model!r}")
    if model == "sequential":
        return OverlapCoefficients(1.0, 1.0, 1.0)
    totals = _sequential(profile)
    path = _RECURSIONS[model](profile)
    if np.all(totals > 0):
        eta = path / totals
        if np.all(eta > 0):
            return OverlapCoefficients(*(min(float(e), 1.0) for e in eta))
    if totals[2] <= 0:
        return OverlapCoefficients(1.0, 1.0, 1.0)
    eta_comm = (iteration_time_for(profile, model) - totals[0] - totals[1]) / totals[2]
    return OverlapCoefficients(1.0, 1.0, min(max(float(eta_comm), ETA_FLOOR), 1.0))


def generalized_tau(job: JobSpec, placement: Placement, k: float, cluster: ClusterSpec,
                    coefficients: OverlapCoefficients) -> float:
    if placement.workers == 0:
        raise ModelError("placement has no workers")
    return iteration_time(job, placement.num_servers, k, cluster, coefficients.as_tuple())
