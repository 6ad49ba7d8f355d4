"""Rounding a fractional placement into whole GPUs.

The fractional GPU mass of each job on each server is merged into a whole
part and a remainder.  The remainders become unit tasks of a generalized
assignment problem (GAP) whose fractional optimum is turned into an
integral assignment by the Shmoys-Tardos bin construction and a minimum
cost bipartite matching.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, solve
from .relaxation import DdljsInstance, FractionalSolution, build_relaxation, solve_relaxation

MASS_TOL = 1e-6
FRAC_TOL = 1e-9


class InternalInconsistency(RuntimeError):
    pass


@dataclass
class Merged:
    y_hat: np.ndarray       # (J, S) whole GPUs already fixed
    z_hat: np.ndarray       # (J, S) fractional remainders
    residual: np.ndarray    # (S,) N_hat, at least 1
    task_jobs: np.ndarray   # job of each task, grouped by job


@dataclass
class GapInstance:
    task_jobs: np.ndarray
    costs: np.ndarray       # (L, S)
    capacities: np.ndarray  # N_hat
    zeta: np.ndarray        # (L, S) fractional GAP optimum
    beta: float


def merge_fractions(sol: FractionalSolution, inst: DdljsInstance) -> Merged:
    mass = sol.server_mass()
    total = mass.sum(axis=1)
    bad = np.flatnonzero(np.abs(total - inst.gpus) > MASS_TOL)
    if bad.size:
        raise InternalInconsistency(f"job {int(bad[0])}: fractional mass {total[bad[0]]:.9g} != {inst.gpus[bad[0]]}")
    y_hat = np.floor(mass + FRAC_TOL).astype(int)
    z_hat = mass - y_hat
    z_hat[np.abs(z_hat) < FRAC_TOL] = 0.0
    z_hat = np.clip(z_hat, 0.0, None)
    residual = np.maximum(1, inst.capacities - y_hat.sum(axis=0))
    counts = []
    for j, lj in enumerate(z_hat.sum(axis=1)):
        n = round(lj)
        if abs(lj - n) > MASS_TOL:
            raise InternalInconsistency(f"job {j}: remainder mass {lj:.9g} is not whole")
        counts.append(n)
    task_jobs = np.repeat(np.arange(inst.num_jobs), counts)
    return Merged(y_hat, z_hat, residual, task_jobs)


def build_gap(merged: Merged, inst: DdljsInstance) -> GapInstance:
    """Fractional GAP over the remainder tasks; ``beta`` is its optimum."""
    L, S = merged.task_jobs.size, inst.num_servers
    costs = (inst.gpus[merged.task_jobs][:, None] - merged.y_hat[merged.task_jobs]).astype(float)
    if L == 0:
        return GapInstance(merged.task_jobs, costs.reshape(0, S), merged.residual, np.zeros((0, S)), 0.0)
    A_eq = np.kron(np.eye(L), np.ones(S))
    A_ub = np.kron(np.ones(L), np.eye(S))
    lp = LinearProgram(costs.ravel(), A_ub, merged.residual.astype(float), A_eq, np.ones(L), np.ones(L * S))
    res = solve(lp)
    zeta = res.x.reshape(L, S)
    zeta[zeta < FRAC_TOL] = 0.0
    return GapInstance(merged.task_jobs, costs, merged.residual, zeta, res.objective)


def min_cost_assignment(cost: np.ndarray):
    """Assign every row to a distinct column at least total cost.

    Shortest augmenting paths with potentials; among equal reduced costs the
    lowest column index wins.  Needs rows <= columns.  Returns the column of
    each row.
    """
    n, m = cost.shape
    if n > m:
        raise ValueError("more rows than columns")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)      # row matched to column (1-based, 0 = free)
    way = np.zeros(m + 1, dtype=int)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def st_round(gap: GapInstance):
    """Integral assignment matrix (L, S) with cost at most ``gap.beta``.

    Each server's load ``sum_l zeta[l, s]`` is spread over
    ``ceil(load)`` unit bins, filling them with the task pieces in task
    order; a task may use any bin it put a piece into.
    """
    L, S = gap.zeta.shape
    if L == 0:
        return np.zeros((0, S), dtype=int)
    edges = {}                      # (task, bin) -> server
    bins_of = []
    nb = 0
    for s in range(S):
        load = gap.zeta[:, s].sum()
        n_bins = max(math.ceil(load - FRAC_TOL), 0)
        first = nb
        nb += n_bins
        level, b = 0.0, 0
        for l in np.flatnonzero(gap.zeta[:, s] > FRAC_TOL):
            piece = gap.zeta[l, s]
            while piece > FRAC_TOL:
                b = min(b, n_bins - 1)
                put = min(piece, 1.0 - level)
                edges[(int(l), first + b)] = s
                piece -= put
                level += put
                if level >= 1.0 - FRAC_TOL:
                    b, level = b + 1, 0.0
                if b >= n_bins:
                    break
        bins_of.extend([s] * n_bins)
    if nb < L:
        raise InternalInconsistency("fewer bins than tasks")
    # integral costs scaled so that the bin index only breaks ties
    scale = L * nb + 1
    big = (gap.costs.max() + 1) * scale * (L + 1) + nb * (L + 1)
    cost = np.full((L, nb), big, dtype=float)
    for (l, b), s in edges.items():
        cost[l, b] = round(gap.costs[l, s]) * scale + b
    cols = min_cost_assignment(cost)
    if np.any(cost[np.arange(L), cols] >= big):
        raise InternalInconsistency("no matching covers every task")
    out = np.zeros((L, S), dtype=int)
    out[np.arange(L), [bins_of[b] for b in cols]] = 1
    return out


# --------------------------------------------------------------------------
# integral solutions


@dataclass
class IntegralSolution:
    y: np.ndarray       # (J, S) GPUs per job per server
    x: np.ndarray
    k: np.ndarray
    chi: np.ndarray
    objective: float


def integral_objective(inst: DdljsInstance, y) -> IntegralSolution:
    """Evaluate a whole-GPU placement.

    A job is split on ``s`` when it has some but not all GPUs there.  Every
    job's contention is ``alpha`` times the largest count of split jobs on a
    server, the same value the relaxation's ``k`` takes at integral points.
    """
    y = np.asarray(y, dtype=int)
    G = inst.gpus[:, None]
    x = ((y >= 1) & (y <= G - 1) & (G > 1)).astype(int)
    k = np.full(inst.num_jobs, inst.alpha * x.sum(axis=0).max(initial=0))
    chi = (y.sum(axis=0) >= 1).astype(int)
    obj = float(inst.cost * (inst.iterations * inst.contention_time * k).sum()
                + inst.penalty * (inst.capacities * chi).sum())
    return IntegralSolution(y, x, k, chi, obj)


def assemble_integral(merged: Merged, zeta_bar, inst: DdljsInstance) -> IntegralSolution:
    y = merged.y_hat.copy()
    for l, j in enumerate(merged.task_jobs):
        y[j] += zeta_bar[l]
    if np.any(y.sum(axis=1) != inst.gpus):
        raise InternalInconsistency("assembled placement does not give every job its GPUs")
    return integral_objective(inst, y)


def ratio_bound(inst: DdljsInstance) -> float:
    vals = np.concatenate([inst.capacities, inst.gpus])
    return vals.max() / vals.min() + 2.0


def _splits(g, caps):
    if len(caps) == 1:
        if g <= caps[0]:
            yield (g,)
        return
    for first in range(min(g, caps[0]) + 1):
        for rest in _splits(g - first, caps[1:]):
            yield (first,) + rest


def enumerate_integral_optimum(inst: DdljsInstance, limit: int = 200000) -> IntegralSolution:
    """Best whole-GPU placement by exhaustive search (tiny instances only)."""
    caps = tuple(int(c) for c in inst.capacities)
    options = [list(_splits(int(g), caps)) for g in inst.gpus]
    if math.prod(len(o) for o in options) > limit:
        raise ValueError("instance too large to enumerate")
    best = None
    for combo in itertools.product(*options):
        y = np.array(combo)
        if np.any(y.sum(axis=0) > inst.capacities):
            continue
        cand = integral_objective(inst, y)
        if best is None or cand.objective < best.objective - 1e-12:
            best = cand
    if best is None:
        raise ValueError("no placement fits the capacities")
    return best


# --------------------------------------------------------------------------
# pipeline


@dataclass
class RoundingReport:
    instance: DdljsInstance
    plain_objective: float
    strong_objective: float
    gap_beta: float
    matching_cost: float
    integral: IntegralSolution
    residual: np.ndarray
    task_counts: np.ndarray     # integral tasks placed on each server
    bound: float
    optimum: IntegralSolution | None = None
    zeta_bar: np.ndarray | None = None  # task-by-server 0/1 assignment
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self):
        if self.optimum is None:
            return None
        if self.optimum.objective == 0:
            return 1.0 if self.integral.objective == 0 else math.inf
        return self.integral.objective / self.optimum.objective

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "server", "value"])
        w.writerow(["plain_lp_objective", "", f"{self.plain_objective:.9g}"])
        w.writerow(["strengthened_lp_objective", "", f"{self.strong_objective:.9g}"])
        w.writerow(["gap_beta", "", f"{self.gap_beta:.9g}"])
        w.writerow(["matching_cost", "", f"{self.matching_cost:.9g}"])
        w.writerow(["integral_objective", "", f"{self.integral.objective:.9g}"])
        w.writerow(["constant_terms", "", f"{self.instance.constant_terms():.9g}"])
        if self.optimum is not None:
            w.writerow(["integral_optimum", "", f"{self.optimum.objective:.9g}"])
            w.writerow(["ratio", "", f"{self.ratio:.9g}"])
        w.writerow(["ratio_bound", "", f"{self.bound:.9g}"])
        used = self.integral.y.sum(axis=0)
        for s in range(self.instance.num_servers):
            w.writerow(["gpus_used", s, int(used[s])])
            w.writerow(["capacity", s, int(self.instance.capacities[s])])
            w.writerow(["residual_capacity", s, int(self.residual[s])])
            w.writerow(["rounded_tasks", s, int(self.task_counts[s])])
        return buf.getvalue()


def round_instance(inst: DdljsInstance, with_optimum: bool = False) -> RoundingReport:
    plain = solve_relaxation(build_relaxation(inst, strengthen=False))
    strong = solve_relaxation(build_relaxation(inst, strengthen=True))
    merged = merge_fractions(strong, inst)
    gap = build_gap(merged, inst)
    zeta_bar = st_round(gap)
    integral = assemble_integral(merged, zeta_bar, inst)
    report = RoundingReport(
        inst, plain.objective, strong.objective, gap.beta, float((gap.costs * zeta_bar).sum()),
        integral, merged.residual, zeta_bar.sum(axis=0), ratio_bound(inst), zeta_bar=zeta_bar,
    )
    if with_optimum:
        report.optimum = enumerate_integral_optimum(inst)
    return report
