"""GPU-level placement program and its linear relaxations.

Each job ``j`` has ``G_j`` GPU slots; ``z[j][g, s]`` is the share of slot
``g`` placed on server ``s``.  The program also carries

* ``gamma[j, s]``: job ``j`` uses server ``s``;
* ``chi[s]``: server ``s`` is in use;
* ``x[j, s]``: job ``j`` is split and has part of itself on ``s``;
* ``k[j]``: contention of job ``j``, at least ``alpha`` times the number of
  split jobs on any one server.

The strengthened variant adds ``x'`` (the job is not wholly on ``s``) and
``z' = chi * x'`` linearised by its McCormick envelope.  Every variable
except ``k`` lives in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import iteration_time
from .lp import LinearProgram, solve


@dataclass
class DdljsInstance:
    gpus: np.ndarray          # G_j
    iterations: np.ndarray    # F_j
    base_time: np.ndarray     # d_j, per-iteration time without contention
    contention_time: np.ndarray  # h_j, extra per-iteration time per unit of k
    capacities: np.ndarray    # N_s
    cost: float = 1.0         # c
    penalty: float = 1.0      # mu
    alpha: float = 0.5

    def __post_init__(self):
        self.gpus = np.asarray(self.gpus, dtype=int)
        self.iterations = np.asarray(self.iterations, dtype=float)
        self.base_time = np.asarray(self.base_time, dtype=float)
        self.contention_time = np.asarray(self.contention_time, dtype=float)
        self.capacities = np.asarray(self.capacities, dtype=int)
        J = self.gpus.size
        if not (self.iterations.size == self.base_time.size == self.contention_time.size == J):
            raise ValueError("per-job arrays must have the same length")
        if np.any(self.gpus < 1) or np.any(self.capacities < 1):
            raise ValueError("GPU counts and capacities must be positive")
        if np.any(self.base_time <= 0) or np.any(self.contention_time < 0):
            raise ValueError("need d_j > 0 and h_j >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.cost < 0 or self.penalty < 0:
            raise ValueError("objective weights must be nonnegative")

    @property
    def num_jobs(self):
        return self.gpus.size

    @property
    def num_servers(self):
        return self.capacities.size

    def constant_terms(self) -> float:
        """Objective terms that do not depend on the placement."""
        return float(self.cost * (self.iterations * self.base_time).sum() - self.penalty * self.gpus.sum())


def instance_from_workload(jobs, cluster, cost=1.0, penalty=1.0) -> DdljsInstance:
    """Per-iteration coefficients from the analytical model.

    ``d_j`` is the co-located time; ``h_j`` is the growth of the two-server
    time per unit of contention.
    """
    d = [iteration_time(j, 1, 0.0, cluster) for j in jobs]
    h = [max(iteration_time(j, 2, 2.0, cluster) - iteration_time(j, 2, 1.0, cluster), 0.0) for j in jobs]
    alpha = min(max(cluster.degradation_alpha, 1e-6), 1 - 1e-6)
    return DdljsInstance([j.gpus_requested for j in jobs], [j.iterations for j in jobs], d, h,
                         cluster.server_capacities, cost, penalty, alpha)


class _Vars:
    """Column layout of the relaxation."""

    def __init__(self, inst: DdljsInstance, strengthened: bool):
        J, S = inst.num_jobs, inst.num_servers
        self.z_off = np.concatenate([[0], np.cumsum(inst.gpus * S)])
        n = int(self.z_off[-1])
        self.gamma = n + np.arange(J * S).reshape(J, S)
        n += J * S
        self.chi = n + np.arange(S)
        n += S
        self.x = n + np.arange(J * S).reshape(J, S)
        n += J * S
        self.k = n + np.arange(J)
        n += J
        if strengthened:
            self.xp = n + np.arange(J * S).reshape(J, S)
            n += J * S
            self.zp = n + np.arange(J * S).reshape(J, S)
            n += J * S
        else:
            self.xp = self.zp = None
        self.n = n
        self.S = S

    def z(self, j, g, s):
        return int(self.z_off[j] + g * self.S + s)


@dataclass
class Relaxation:
    instance: DdljsInstance
    lp: LinearProgram
    layout: _Vars
    strengthened: bool


@dataclass
class FractionalSolution:
    z: list                 # per job, array (G_j, S)
    gamma: np.ndarray
    chi: np.ndarray
    x: np.ndarray
    k: np.ndarray
    x_prime: np.ndarray | None
    z_prime: np.ndarray | None
    objective: float

    def server_mass(self) -> np.ndarray:
        """Total fractional GPU mass of each job on each server, shape (J, S)."""
        return np.array([zj.sum(axis=0) for zj in self.z])


def build_relaxation(inst: DdljsInstance, strengthen: bool = True) -> Relaxation:
    J, S = inst.num_jobs, inst.num_servers
    v = _Vars(inst, strengthen)
    ub, rhs, eq, eq_rhs = [], [], [], []

    def row(entries):
        r = np.zeros(v.n)
        for col, val in entries:
            r[col] += val
        return r

    for j in range(J):
        for g in range(inst.gpus[j]):
            eq.append(row((v.z(j, g, s), 1.0) for s in range(S)))
            eq_rhs.append(1.0)
    for s in range(S):
        ub.append(row((v.z(j, g, s), 1.0) for j in range(J) for g in range(inst.gpus[j])))
        rhs.append(inst.capacities[s])
    for j in range(J):
        for s in range(S):
            for g in range(inst.gpus[j]):
                ub.append(row([(v.z(j, g, s), 1.0), (v.gamma[j, s], -1.0)]))
                rhs.append(0.0)
                ub.append(row([(v.gamma[j, s], 1.0), (v.z(j, g, s), -1.0), (v.x[j, s], -1.0)]))
                rhs.append(0.0)
            ub.append(row([(v.gamma[j, s], 1.0), (v.chi[s], -1.0)]))
            rhs.append(0.0)
    for j in range(J):
        for s in range(S):
            ub.append(row([(v.x[jj, s], inst.alpha) for jj in range(J)] + [(v.k[j], -1.0)]))
            rhs.append(0.0)
    if strengthen:
        for j in range(J):
            G = inst.gpus[j]
            for s in range(S):
                # whole-job mass on s unless split: sum_g z >= G (gamma - x')
                ub.append(row([(v.gamma[j, s], G), (v.xp[j, s], -G)]
                              + [(v.z(j, g, s), -1.0) for g in range(G)]))
                rhs.append(0.0)
                for g in range(G):
                    ub.append(row([(v.chi[s], -1.0)] + [(v.z(j, g, t), -1.0) for t in range(S) if t != s]))
                    rhs.append(-1.0)
                zp, xp, chi, x = v.zp[j, s], v.xp[j, s], v.chi[s], v.x[j, s]
                ub.append(row([(zp, 1.0), (x, -1.0)]))
                rhs.append(0.0)
                ub.append(row([(chi, 1.0), (xp, 1.0), (zp, -1.0)]))
                rhs.append(1.0)
                ub.append(row([(zp, 1.0), (chi, -1.0)]))
                rhs.append(0.0)
                ub.append(row([(zp, 1.0), (xp, -1.0)]))
                rhs.append(0.0)

    c = np.zeros(v.n)
    c[v.k] = inst.cost * inst.iterations * inst.contention_time
    c[v.chi] = inst.penalty * inst.capacities
    upper = np.ones(v.n)
    upper[v.k] = np.inf
    lp = LinearProgram(c, np.array(ub), np.array(rhs), np.array(eq), np.array(eq_rhs), upper)
    return Relaxation(inst, lp, v, strengthen)


def solve_relaxation(relax: Relaxation) -> FractionalSolution:
    """Solve the LP; raises ``Infeasible`` when total capacity is short."""
    inst, v = relax.instance, relax.layout
    res = solve(relax.lp)
    x = res.x
    z = [x[v.z_off[j]:v.z_off[j + 1]].reshape(inst.gpus[j], v.S) for j in range(inst.num_jobs)]
    return FractionalSolution(
        z=z, gamma=x[v.gamma], chi=x[v.chi], x=x[v.x], k=x[v.k],
        x_prime=None if v.xp is None else x[v.xp], z_prime=None if v.zp is None else x[v.zp],
        objective=res.objective,
    )
