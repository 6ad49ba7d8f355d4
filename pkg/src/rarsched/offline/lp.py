"""Dense two-phase tableau simplex for small linear programs.

Solves ``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and
``0 <= x <= upper``.  Finite upper bounds become ordinary rows.  Pricing is
Dantzig's rule; after a run of degenerate pivots the solver switches to
Bland's rule for the rest of the phase, which rules out cycling.  Ratio-test
ties go to the row whose basic variable has the lowest index, so the result
is a deterministic function of the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("row count of A and b differ")
        if self.upper.size != n or np.any(self.upper < 0):
            raise ValueError("upper bounds must be nonnegative, one per variable")

    @property
    def num_vars(self):
        return self.c.size


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


class _Tableau:
    def __init__(self, A, b, basis):
        self.T = np.hstack([A, b[:, None]])
        self.basis = list(basis)
        self.iterations = 0

    def pivot(self, r, col):
        T = self.T
        T[r] /= T[r, col]
        others = np.abs(T[:, col]) > 0
        others[r] = False
        T[others] -= np.outer(T[others, col], T[r])
        self.basis[r] = col
        self.iterations += 1

    def run(self, cost, allowed, tol, max_iter, stall_limit=50):
        """Minimise ``cost`` over the columns in ``allowed``; returns the final objective."""
        m = self.T.shape[0]
        bland = False
        stall = 0
        last = np.inf
        while True:
            cb = cost[self.basis]
            reduced = cost - cb @ self.T[:, :-1]
            reduced[~allowed] = 0.0
            candidates = np.flatnonzero(reduced < -tol)
            if candidates.size == 0:
                return float(cb @ self.T[:, -1])
            col = int(candidates[0]) if bland else int(candidates[np.argmin(reduced[candidates])])
            column = self.T[:, col]
            rows = np.flatnonzero(column > tol)
            if rows.size == 0:
                raise Unbounded("objective unbounded below")
            ratios = self.T[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + tol * max(1.0, abs(best))]
            r = int(min(tied, key=lambda i: self.basis[i]))
            self.pivot(r, col)
            if self.iterations > max_iter:
                raise LPError("iteration limit reached")
            obj = float(cost[self.basis] @ self.T[:, -1])
            if obj < last - tol:
                stall, last = 0, obj
            else:
                stall += 1
                if stall >= stall_limit:
                    bland = True
            if m == 0:
                return obj


def solve(lp: LinearProgram, tol: float = TOL, max_iter: int = 100000) -> LPResult:
    n = lp.num_vars
    finite = np.flatnonzero(np.isfinite(lp.upper))
    bound_rows = np.zeros((finite.size, n))
    bound_rows[np.arange(finite.size), finite] = 1.0
    A_le = np.vstack([lp.A_ub, bound_rows])
    b_le = np.concatenate([lp.b_ub, lp.upper[finite]])
    m_le, m_eq = A_le.shape[0], lp.A_eq.shape[0]
    m = m_le + m_eq

    A = np.zeros((m, n + m_le))
    A[:m_le, :n] = A_le
    A[:m_le, n:] = np.eye(m_le)
    A[m_le:, :n] = lp.A_eq
    b = np.concatenate([b_le, lp.b_eq])
    neg = b < 0
    A[neg] *= -1
    b = np.where(neg, -b, b)

    # slack columns give a starting basis for rows whose sign was not flipped
    basis = [-1] * m
    for i in range(m_le):
        if not neg[i]:
            basis[i] = n + i
    need = [i for i in range(m) if basis[i] < 0]
    art = np.zeros((m, len(need)))
    for k, i in enumerate(need):
        art[i, k] = 1.0
        basis[i] = n + m_le + k
    tab = _Tableau(np.hstack([A, art]), b, basis)
    ncols = n + m_le + len(need)
    is_art = np.zeros(ncols, dtype=bool)
    is_art[n + m_le:] = True

    if need:
        phase1 = is_art.astype(float)
        infeas = tab.run(phase1, np.ones(ncols, dtype=bool), tol, max_iter)
        if infeas > tol * max(1.0, float(np.abs(b).max(initial=0.0))) * 10:
            raise Infeasible(f"no feasible point (phase 1 residual {infeas:.3g})")
        # drive remaining artificials out of the basis or drop their rows
        keep = []
        for r in range(m):
            if is_art[tab.basis[r]]:
                row = tab.T[r, :-1].copy()
                row[is_art] = 0.0
                cols = np.flatnonzero(np.abs(row) > tol)
                if cols.size:
                    tab.pivot(r, int(cols[0]))
                    keep.append(r)
            else:
                keep.append(r)
        tab.T = tab.T[keep]
        tab.basis = [tab.basis[r] for r in keep]

    cost = np.zeros(ncols)
    cost[:n] = lp.c
    allowed = ~is_art
    obj = tab.run(cost, allowed, tol, max_iter)
    x_full = np.zeros(ncols)
    x_full[tab.basis] = tab.T[:, -1]
    x = np.clip(x_full[:n], 0.0, None)
    return LPResult(x=x, objective=float(lp.c @ x) if n else obj, iterations=tab.iterations)
