"""Dense two-phase revised simplex for bounded-variable linear programs.

Problems are always minimized. Every variable needs a finite lower bound;
upper bounds may be ``inf``. Rows are ``a x {<=, =, >=} b``.

Duals follow the usual min-sense convention: a ``>=`` row has a
nonnegative dual and a ``<=`` row a nonpositive one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = "<=", "=", ">="
OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REPORT_TOL = 1e-7
REFACTOR_EVERY = 50


class LPError(Exception):
    pass


class MalformedLP(LPError, ValueError):
    pass


class NumericalBreakdown(LPError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        m = self.A.shape[0]
        if self.b.size != m or len(self.senses) != m:
            raise MalformedLP("row count mismatch between A, b and senses")
        if self.lo.size != n or self.hi.size != n:
            raise MalformedLP("bound vectors must match the objective length")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise MalformedLP(f"unknown row sense in {set(self.senses)}")
        if not np.all(np.isfinite(self.lo)):
            raise MalformedLP("lower bounds must be finite")
        if np.any(self.lo > self.hi):
            raise MalformedLP("lo > hi for some variable")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LpSolution:
    status: str
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    iterations: int = 0


class _Simplex:
    """Working state for one solve: columns are [structural | slack | artificial]."""

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        m, n = lp.A.shape
        self.m, self.n = m, n
        senses = np.array(lp.senses, dtype=object)
        slack_rows = np.flatnonzero(senses != EQ)
        ns = slack_rows.size
        S = np.zeros((m, ns))
        S[slack_rows, np.arange(ns)] = np.where(senses[slack_rows] == LE, 1.0, -1.0)

        lo = np.concatenate([lp.lo, np.zeros(ns)])
        hi = np.concatenate([lp.hi, np.full(ns, np.inf)])
        # Nonbasic structurals start at their lower bound.
        resid = lp.b - lp.A @ lp.lo

        basis = np.full(m, -1, dtype=int)
        for k, r in enumerate(slack_rows):
            sign = S[r, k]
            if sign * resid[r] >= 0:
                basis[r] = n + k
        art_rows = np.flatnonzero(basis < 0)
        na = art_rows.size
        Art = np.zeros((m, na))
        art_sign = np.where(resid[art_rows] >= 0, 1.0, -1.0)
        Art[art_rows, np.arange(na)] = art_sign
        basis[art_rows] = n + ns + np.arange(na)

        self.M = np.hstack([lp.A, S, Art]) if (ns or na) else lp.A.copy()
        self.N = n + ns + na
        self.lo = np.concatenate([lo, np.zeros(na)])
        self.hi = np.concatenate([hi, np.full(na, np.inf)])
        self.art = np.arange(n + ns, self.N)
        self.x = self.lo.copy()
        self.basis = basis
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[basis] = True
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.b = lp.b
        self.scale_b = max(1.0, float(np.max(np.abs(lp.b), initial=0.0)))
        self.pivots = 0
        self.refactor()

    def refactor(self):
        B = self.M[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis matrix") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise NumericalBreakdown("non-finite basis inverse")
        nb = ~self.is_basic
        rhs = self.b - self.M[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ rhs

    def run(self, cost: np.ndarray) -> str:
        m = self.m
        bland_after = 10 * (m + self.N)
        limit = bland_after + 50 * (m + self.N) + 1000
        tol_d = OPT_TOL * (1.0 + np.abs(cost))
        since_refactor = 0
        count = 0
        while True:
            if since_refactor >= REFACTOR_EVERY:
                self.refactor()
                since_refactor = 0
            bland = count >= bland_after
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.M
            d[self.basis] = 0.0
            movable = (~self.is_basic) & (self.hi > self.lo)
            inc = movable & ~self.at_upper & (d < -tol_d)
            dec = movable & self.at_upper & (d > tol_d)
            eligible = inc | dec
            if not eligible.any():
                return OPTIMAL
            if bland:
                j = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, np.abs(d), -1.0)
                j = int(np.argmax(score))
            direction = 1.0 if inc[j] else -1.0

            alpha = self.Binv @ self.M[:, j]
            delta = direction * alpha
            xb = self.x[self.basis]
            lb = self.lo[self.basis]
            ub = self.hi[self.basis]
            ptol = PIVOT_TOL * max(1.0, float(np.max(np.abs(alpha), initial=0.0)))
            ratios = np.full(m, np.inf)
            pos = delta > ptol
            neg = (delta < -ptol) & np.isfinite(ub)
            ratios[pos] = (xb[pos] - lb[pos]) / delta[pos]
            ratios[neg] = (ub[neg] - xb[neg]) / (-delta[neg])
            ratios = np.maximum(ratios, 0.0)
            tmin = float(ratios.min()) if m else np.inf
            t_flip = self.hi[j] - self.lo[j]

            if not (np.isfinite(tmin) or np.isfinite(t_flip)):
                return UNBOUNDED
            if t_flip <= tmin:
                t = t_flip
                self.x[self.basis] = xb - t * delta
                self.at_upper[j] = not self.at_upper[j]
                self.x[j] = self.hi[j] if self.at_upper[j] else self.lo[j]
            else:
                ties = np.flatnonzero(ratios <= tmin + FEAS_TOL * max(1.0, tmin))
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(delta[ties]))])
                t = ratios[r]
                q = self.basis[r]
                self.x[self.basis] = xb - t * delta
                self.x[j] = (self.lo[j] + t) if direction > 0 else (self.hi[j] - t)
                upper = delta[r] < 0
                self.x[q] = self.hi[q] if upper else self.lo[q]
                self.at_upper[q] = upper
                self.is_basic[q] = False
                self.is_basic[j] = True
                self.at_upper[j] = False
                self.basis[r] = j
                self._update_inverse(alpha, r)
                since_refactor += 1
            count += 1
            self.pivots += 1
            if count > limit:
                raise NumericalBreakdown("simplex iteration limit exceeded")

    def _update_inverse(self, alpha, r):
        piv = alpha[r]
        row = self.Binv[r, :] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r, :] = row

    def drive_out_artificials(self):
        """Pivot zero-level basic artificials out where a structural/slack column allows it."""
        art_set = set(self.art.tolist())
        candidates = np.flatnonzero(~self.is_basic)
        candidates = candidates[candidates < self.art[0]] if self.art.size else candidates
        for r in range(self.m):
            if self.basis[r] not in art_set or candidates.size == 0:
                continue
            row = self.Binv[r, :] @ self.M[:, candidates]
            k = int(np.argmax(np.abs(row)))
            if abs(row[k]) <= 1e-7:
                continue  # redundant row; artificial stays basic, fixed at zero
            j = int(candidates[k])
            q = self.basis[r]
            alpha = self.Binv @ self.M[:, j]
            self.is_basic[q] = False
            self.x[q] = 0.0
            self.at_upper[q] = False
            self.is_basic[j] = True
            self.at_upper[j] = False
            self.basis[r] = j
            self._update_inverse(alpha, r)
            candidates = candidates[candidates != j]
        self.refactor()


def _scaled_primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    ax = lp.A @ x
    scale = np.maximum(1.0, np.maximum(np.abs(lp.b), np.abs(lp.A) @ np.abs(x)))
    senses = np.array(lp.senses, dtype=object)
    viol = np.zeros(lp.b.size)
    le = senses == LE
    ge = senses == GE
    eq = senses == EQ
    viol[le] = np.maximum(ax[le] - lp.b[le], 0.0)
    viol[ge] = np.maximum(lp.b[ge] - ax[ge], 0.0)
    viol[eq] = np.abs(ax[eq] - lp.b[eq])
    rows = float(np.max(viol / scale, initial=0.0))
    bscale = np.maximum(1.0, np.abs(x))
    low = np.maximum(lp.lo - x, 0.0)
    high = np.where(np.isfinite(lp.hi), np.maximum(x - lp.hi, 0.0), 0.0)
    bounds = float(np.max(np.maximum(low, high) / bscale, initial=0.0))
    return max(rows, bounds)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve ``lp`` to optimality, or report infeasible/unbounded.

    Dantzig pricing with a switch to Bland's rule after ``10 (m + n)`` pivots.
    Raises NumericalBreakdown rather than returning an inaccurate optimum.
    """
    m, n = lp.A.shape
    if m == 0:
        # Box-constrained only: each variable sits at the bound its cost prefers.
        if np.any((lp.c < 0) & ~np.isfinite(lp.hi)):
            return LpSolution(UNBOUNDED)
        x = np.where(lp.c < 0, lp.hi, lp.lo)
        return LpSolution(OPTIMAL, x, np.zeros(0), lp.c.copy(),
                          float(lp.c @ x + lp.constant), 0)

    sx = _Simplex(lp)
    if sx.art.size:
        c1 = np.zeros(sx.N)
        c1[sx.art] = 1.0
        sx.run(c1)
        sx.refactor()
        infeas = float(np.sum(np.abs(sx.x[sx.art])))
        if infeas > FEAS_TOL * sx.scale_b * max(1, sx.art.size):
            return LpSolution(INFEASIBLE, iterations=sx.pivots)
        sx.hi[sx.art] = 0.0
        sx.at_upper[sx.art] = False
        nb_art = sx.art[~sx.is_basic[sx.art]]
        sx.x[nb_art] = 0.0
        sx.drive_out_artificials()

    c2 = np.zeros(sx.N)
    c2[:n] = lp.c
    status = sx.run(c2)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=sx.pivots)
    sx.refactor()
    x = np.clip(sx.x[:n], lp.lo, lp.hi)
    y = c2[sx.basis] @ sx.Binv
    d = lp.c - y @ lp.A
    resid = _scaled_primal_residual(lp, x)
    if resid > REPORT_TOL:
        raise NumericalBreakdown(f"primal residual {resid:.3e} after final refactorization")
    return LpSolution(OPTIMAL, x, y, d, float(lp.c @ x + lp.constant), sx.pivots)


def check_duality(lp: LinearProgram, sol: LpSolution) -> dict:
    """Residual report for an optimal solution (all values are scaled/relative).

    Keys: primal, dual, complementarity, gap.
    """
    if sol.status != OPTIMAL:
        raise ValueError("check_duality needs an optimal solution")
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    cscale = max(1.0, float(np.max(np.abs(lp.c), initial=0.0)))
    senses = np.array(lp.senses, dtype=object)

    primal = _scaled_primal_residual(lp, x)

    sign_viol = np.zeros(y.size)
    le = senses == LE
    ge = senses == GE
    sign_viol[le] = np.maximum(y[le], 0.0)
    sign_viol[ge] = np.maximum(-y[ge], 0.0)
    # reduced costs must agree with the side of the box each variable is on
    width = np.maximum(1.0, np.abs(x))
    at_lo = np.abs(x - lp.lo) <= 1e-9 * width
    at_hi = np.isfinite(lp.hi) & (np.abs(x - lp.hi) <= 1e-9 * width)
    rc_viol = np.where(at_lo & at_hi, 0.0,
                       np.where(at_lo, np.maximum(-d, 0.0),
                                np.where(at_hi, np.maximum(d, 0.0), np.abs(d))))
    stationarity = np.abs(lp.c - y @ lp.A - d)
    dual = max(float(np.max(sign_viol, initial=0.0)),
               float(np.max(rc_viol, initial=0.0)),
               float(np.max(stationarity, initial=0.0))) / cscale

    slack = lp.b - lp.A @ x
    row_scale = np.maximum(1.0, np.abs(lp.b))
    comp_rows = np.abs(y * slack) / (cscale * row_scale)
    dist = np.where(d >= 0, x - lp.lo, np.where(np.isfinite(lp.hi), lp.hi - x, 0.0))
    comp_vars = np.abs(d * dist) / (cscale * width)
    comp = max(float(np.max(comp_rows, initial=0.0)), float(np.max(comp_vars, initial=0.0)))

    hi_term = np.where(np.isfinite(lp.hi), lp.hi, 0.0)
    dual_obj = float(lp.b @ y + np.sum(np.where(d > 0, d * lp.lo, d * hi_term)) + lp.constant)
    primal_obj = float(lp.c @ x + lp.constant)
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))
    return {"primal": primal, "dual": dual, "complementarity": comp, "gap": gap,
            "primal_objective": primal_obj, "dual_objective": dual_obj}
