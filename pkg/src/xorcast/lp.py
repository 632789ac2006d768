"""Two-phase dense simplex for small linear programs.

Variables carry box bounds that are handled implicitly: a nonbasic variable
may rest at either of its bounds, so the tableau keeps one row per
functional constraint no matter how many variables are boxed. Bland's rule
fixes the pivot order, which makes runs deterministic and cycle-free. This
is meant for the small dense programs produced elsewhere in the package,
not as a general solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericalFailure

TOL = 1e-9
VERIFY_TOL = 1e-8
LE = "<="
EQ = "="

AT_LOWER, AT_UPPER, BASIC = 0, 1, 2


@dataclass
class LinearProgram:
    """maximize objective @ x subject to the constraints and box bounds.

    constraints: list of (coefficients, "<=" or "=", rhs).
    bounds: per-variable (lo, hi); lo must be finite, hi may be math.inf.
    """

    objective: np.ndarray
    constraints: list
    bounds: list

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.ndim != 1 or self.objective.shape[0] < 1:
            raise ContractViolation("objective must be a nonempty vector")
        n = self.objective.shape[0]
        rows = []
        for k, (coefs, rel, rhs) in enumerate(self.constraints):
            coefs = np.asarray(coefs, dtype=float)
            if coefs.shape != (n,):
                raise ContractViolation(f"constraint {k}: expected {n} coefficients")
            if rel not in (LE, EQ):
                raise ContractViolation(f"constraint {k}: relation must be '<=' or '='")
            rows.append((coefs, rel, float(rhs)))
        self.constraints = rows
        if len(self.bounds) != n:
            raise ContractViolation("bounds must cover every variable")
        boxed = []
        for j, (lo, hi) in enumerate(self.bounds):
            lo, hi = float(lo), float(hi)
            if not math.isfinite(lo):
                raise ContractViolation(f"variable {j}: lower bound must be finite")
            if hi < lo:
                raise ContractViolation(f"variable {j}: upper bound below lower bound")
            boxed.append((lo, hi))
        self.bounds = boxed

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]


@dataclass
class LpSolution:
    status: str                      # 'Optimal' | 'Infeasible' | 'Unbounded'
    value: float | None
    point: np.ndarray | None
    tight: tuple[int, ...] = ()


class _Simplex:
    def __init__(self, lp: LinearProgram):
        self.lp = lp
        n = lp.num_vars
        m = len(lp.constraints)
        lo = np.array([b[0] for b in lp.bounds])
        hi = np.array([b[1] for b in lp.bounds])
        self.lo = lo
        n_le = sum(1 for _, rel, _ in lp.constraints if rel == LE)
        # column layout: structural, slacks for <= rows, artificials
        a = np.zeros((m, n + n_le + m))
        b = np.zeros(m)
        slack_of = {}
        s = n
        for i, (coefs, rel, rhs) in enumerate(lp.constraints):
            a[i, :n] = coefs
            b[i] = rhs - coefs @ lo
            if rel == LE:
                a[i, s] = 1.0
                slack_of[i] = s
                s += 1
        basis = []
        art_cols = []
        u = np.concatenate([hi - lo, np.full(n_le + m, math.inf)])
        for i in range(m):
            if b[i] < 0.0:
                a[i] *= -1.0
                b[i] = -b[i]
                flipped = True
            else:
                flipped = False
            if i in slack_of and not flipped:
                basis.append(slack_of[i])
            else:
                col = s
                a[i, col] = 1.0
                art_cols.append(col)
                basis.append(col)
                s += 1
        self.T = a[:, :s].copy()
        self.beta = b.copy()
        self.basis = basis
        self.N = s
        self.m_rows = m
        self.n_struct = n
        self.u = u[:s]
        self.is_artificial = np.zeros(s, dtype=bool)
        self.is_artificial[art_cols] = True
        self.fixed = self.u <= TOL
        self.status_arr = np.full(s, AT_LOWER, dtype=np.int8)
        for j in basis:
            self.status_arr[j] = BASIC
        self.pivots = 0
        self.cap = 1000 + 100 * (m + s)

    def _reduced(self, c: np.ndarray) -> np.ndarray:
        if len(self.basis) == 0:
            return c.copy()
        return c - c[self.basis] @ self.T

    def _entering(self, red: np.ndarray) -> int:
        for j in range(self.N):
            if self.status_arr[j] == BASIC or self.fixed[j]:
                continue
            if self.status_arr[j] == AT_LOWER and red[j] > TOL:
                return j
            if self.status_arr[j] == AT_UPPER and red[j] < -TOL:
                return j
        return -1

    def _pivot(self, r: int, e: int, t: float, direction: int, to_upper: bool):
        T, beta = self.T, self.beta
        col = T[:, e].copy()
        beta -= direction * t * col
        np.maximum(beta, 0.0, out=beta)
        leaving = self.basis[r]
        piv = col[r]
        row = T[r] / piv
        T -= np.outer(col, row)
        T[r] = row
        beta[r] = t if direction > 0 else self.u[e] - t
        self.basis[r] = e
        self.status_arr[e] = BASIC
        self.status_arr[leaving] = AT_UPPER if to_upper else AT_LOWER
        if self.is_artificial[leaving]:
            self.fixed[leaving] = True
        return row

    def _iterate(self, c: np.ndarray, phase: int) -> str:
        red = self._reduced(c)
        while True:
            e = self._entering(red)
            if e < 0:
                return "optimal"
            if self.pivots >= self.cap:
                raise NumericalFailure(
                    "simplex stalled",
                    {"phase": phase, "pivots": self.pivots, "entering": int(e)})
            self.pivots += 1
            direction = 1 if self.status_arr[e] == AT_LOWER else -1
            best_t = math.inf
            best_row = -1
            to_upper = False
            for i in range(self.m_rows):
                coef = direction * self.T[i, e]
                if coef > TOL:
                    t = max(self.beta[i], 0.0) / coef
                    cand_up = False
                elif coef < -TOL:
                    ub = self.u[self.basis[i]]
                    if not math.isfinite(ub):
                        continue
                    t = max(ub - self.beta[i], 0.0) / -coef
                    cand_up = True
                else:
                    continue
                if t < best_t - 1e-12 or (t <= best_t + 1e-12 and
                                          (best_row < 0 or self.basis[i] < self.basis[best_row])):
                    best_t = t
                    best_row = i
                    to_upper = cand_up
            own = self.u[e]
            if own <= best_t + 1e-12:
                if not math.isfinite(own):
                    if phase == 1:
                        raise NumericalFailure("phase one ray", {"entering": int(e)})
                    return "unbounded"
                # bound flip, no basis change
                self.beta -= direction * own * self.T[:, e]
                np.maximum(self.beta, 0.0, out=self.beta)
                self.status_arr[e] = AT_UPPER if direction > 0 else AT_LOWER
                continue
            row = self._pivot(best_row, e, best_t, direction, to_upper)
            red = red - red[e] * row

    def _drive_out_artificials(self):
        r = 0
        while r < self.m_rows:
            j = self.basis[r]
            if not self.is_artificial[j]:
                r += 1
                continue
            e = -1
            for cand in range(self.N):
                if self.is_artificial[cand] or self.status_arr[cand] == BASIC:
                    continue
                if abs(self.T[r, cand]) > TOL:
                    e = cand
                    break
            if e < 0:
                # row is redundant in the structural columns; drop it
                self.T = np.delete(self.T, r, axis=0)
                self.beta = np.delete(self.beta, r)
                del self.basis[r]
                self.m_rows -= 1
                self.status_arr[j] = AT_LOWER
                self.fixed[j] = True
                continue
            direction = 1 if self.status_arr[e] == AT_LOWER else -1
            self._pivot(r, e, 0.0, direction, to_upper=False)
            r += 1

    def phase_one(self) -> bool:
        c1 = np.zeros(self.N)
        c1[self.is_artificial] = -1.0
        self._iterate(c1, phase=1)
        infeas = sum(self.beta[i] for i in range(self.m_rows)
                     if self.is_artificial[self.basis[i]])
        if infeas > TOL:
            return False
        self._drive_out_artificials()
        self.u[self.is_artificial] = 0.0
        self.fixed |= self.is_artificial
        return True

    def phase_two(self) -> str:
        c2 = np.zeros(self.N)
        c2[:self.n_struct] = self.lp.objective
        return self._iterate(c2, phase=2)

    def extract(self) -> np.ndarray:
        x = np.where(self.status_arr == AT_UPPER,
                     np.where(np.isfinite(self.u), self.u, 0.0), 0.0)
        for i in range(self.m_rows):
            x[self.basis[i]] = self.beta[i]
        return self.lo + x[:self.n_struct]


def _verify(lp: LinearProgram, x: np.ndarray):
    tight = []
    for k, (coefs, rel, rhs) in enumerate(lp.constraints):
        lhs = float(coefs @ x)
        if rel == LE and lhs > rhs + VERIFY_TOL:
            raise NumericalFailure("solution violates a constraint",
                                   {"constraint": k, "lhs": lhs, "rhs": rhs})
        if rel == EQ and abs(lhs - rhs) > VERIFY_TOL:
            raise NumericalFailure("solution violates an equality",
                                   {"constraint": k, "lhs": lhs, "rhs": rhs})
        if abs(lhs - rhs) <= VERIFY_TOL:
            tight.append(k)
    for j, (lo, hi) in enumerate(lp.bounds):
        if x[j] < lo - VERIFY_TOL or x[j] > hi + VERIFY_TOL:
            raise NumericalFailure("solution violates a variable bound",
                                   {"variable": j, "value": float(x[j])})
    return tuple(tight)


def solve(lp: LinearProgram) -> LpSolution:
    """Solve to optimality. Identical inputs take the identical pivot path."""
    sx = _Simplex(lp)
    if not sx.phase_one():
        return LpSolution("Infeasible", None, None)
    if sx.phase_two() == "unbounded":
        return LpSolution("Unbounded", None, None)
    x = sx.extract()
    tight = _verify(lp, x)
    return LpSolution("Optimal", float(lp.objective @ x), x, tight)


def feasible(lp: LinearProgram):
    """Phase one only. Returns (True, witness) or (False, None)."""
    sx = _Simplex(lp)
    if not sx.phase_one():
        return False, None
    x = sx.extract()
    _verify(lp, x)
    return True, x
