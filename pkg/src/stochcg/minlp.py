"""Global branch-and-bound for small factorable MINLPs.

A :class:`FactorableModel` is linear apart from explicit bilinear links
``w = a * b``. Each node relaxes the links with McCormick envelopes over the
node's box and solves the resulting LP with :func:`stochcg.lp.solve_lp`.
Integer variables are branched first (most fractional), then the link with
the largest violation at the relaxation point.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import EQ, GE, LE, OPTIMAL, UNBOUNDED, LinearProgram, NumericalBreakdown, solve_lp

INT_TOL = 1e-6
ACCEPT_TOL = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_BOUNDS_ONLY = "bounds_only"
STATUS_TIMEOUT = "timeout"


class InfiniteBound(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class Var:
    name: str
    lo: float
    hi: float
    integer: bool = False
    aux: bool = False          # introduced by reformulation (e.g. product variables)
    implied_hi: bool = False   # finite upper bound derived from other data, not declared


class FactorableModel:
    """Linear rows and objective over bounded variables, plus bilinear links."""

    def __init__(self, name: str = ""):
        self.name = name
        self.vars: list[Var] = []
        self.rows: list[tuple[dict, str, float, bool]] = []
        self.links: list[tuple[int, int, int]] = []
        self.objective: dict[int, float] = {}
        self.constant = 0.0
        self._by_name: dict[str, int] = {}

    def add_var(self, name, lo=0.0, hi=math.inf, integer=False, aux=False, implied_hi=False) -> int:
        if name in self._by_name:
            raise ValueError(f"duplicate variable {name!r}")
        if lo > hi:
            raise ValueError(f"{name}: lo > hi")
        self.vars.append(Var(name, float(lo), float(hi), integer, aux, implied_hi))
        self._by_name[name] = len(self.vars) - 1
        return len(self.vars) - 1

    def add_row(self, coefs: dict, sense: str, rhs: float, aux: bool = False):
        if sense not in (LE, EQ, GE):
            raise ValueError(sense)
        self.rows.append(({int(k): float(v) for k, v in coefs.items() if v != 0.0},
                          sense, float(rhs), aux))

    def add_link(self, product: int, a: int, b: int):
        self.links.append((product, a, b))

    def set_objective(self, coefs: dict, constant: float = 0.0):
        self.objective = {int(k): float(v) for k, v in coefs.items()}
        self.constant = float(constant)

    def index(self, name: str) -> int:
        return self._by_name[name]

    @property
    def n(self) -> int:
        return len(self.vars)

    def bounds(self):
        lo = np.array([v.lo for v in self.vars])
        hi = np.array([v.hi for v in self.vars])
        return lo, hi

    def objective_value(self, x) -> float:
        return self.constant + sum(c * x[j] for j, c in self.objective.items())

    def compile(self) -> "_Compiled":
        return _Compiled(self)


class _Compiled:
    def __init__(self, model: FactorableModel):
        n = model.n
        m = len(model.rows)
        self.n = n
        self.A = np.zeros((m, n))
        self.b = np.zeros(m)
        self.senses = []
        for r, (coefs, sense, rhs, _aux) in enumerate(model.rows):
            for j, v in coefs.items():
                self.A[r, j] += v
            self.b[r] = rhs
            self.senses.append(sense)
        self.c = np.zeros(n)
        for j, v in model.objective.items():
            self.c[j] += v
        self.constant = model.constant
        self.lo, self.hi = model.bounds()
        self.integer = np.array([v.integer for v in model.vars], dtype=bool)
        self.int_idx = np.flatnonzero(self.integer)
        if model.links:
            L = np.array(model.links, dtype=int)
            self.W, self.La, self.Lb = L[:, 0], L[:, 1], L[:, 2]
        else:
            self.W = self.La = self.Lb = np.zeros(0, dtype=int)
        factors = np.union1d(self.La, self.Lb)
        bad = [model.vars[j].name for j in factors
               if not (np.isfinite(self.lo[j]) and np.isfinite(self.hi[j]))]
        if bad:
            raise InfiniteBound(f"bilinear factors need finite bounds: {bad[:5]}")
        self.senses_arr = np.array(self.senses, dtype=object)


def mccormick_cuts(lo_a, hi_a, lo_b, hi_b):
    """The four envelope inequalities for ``w = a*b`` over a box.

    Returns ``[((cw, ca, cb), sense, rhs), ...]`` meaning
    ``cw*w + ca*a + cb*b  sense  rhs``.
    """
    box = (lo_a, hi_a, lo_b, hi_b)
    if not all(np.isfinite(v) for v in box):
        raise InfiniteBound("McCormick envelopes need a finite box")
    la, ua, lb, ub = (float(v) for v in box)
    return [
        ((1.0, -lb, -la), GE, -la * lb),
        ((1.0, -ub, -ua), GE, -ua * ub),
        ((1.0, -lb, -ua), LE, -ua * lb),
        ((1.0, -ub, -la), LE, -la * ub),
    ]


def _row_violation(A, senses_arr, b, x):
    ax = A @ x
    scale = np.maximum(1.0, np.maximum(np.abs(b), np.abs(A) @ np.abs(x)))
    viol = np.where(senses_arr == LE, np.maximum(ax - b, 0.0),
                    np.where(senses_arr == GE, np.maximum(b - ax, 0.0), np.abs(ax - b)))
    return viol / scale


def _link_violation(comp, x):
    prod = x[comp.La] * x[comp.Lb]
    return np.abs(x[comp.W] - prod) / np.maximum(1.0, np.abs(prod))


def max_violation(model: FactorableModel, point, _compiled=None) -> float:
    """Largest scaled residual over rows and bilinear links.

    Link residuals are ``|w - a b| / max(1, |a b|)``; row residuals are
    divided by ``max(1, |rhs|, sum |a_j x_j|)``.
    """
    comp = _compiled or model.compile()
    x = np.asarray(point, dtype=float).ravel()
    if x.size != comp.n:
        raise DimensionMismatch(f"point has {x.size} entries, model has {comp.n} variables")
    v = 0.0
    if comp.A.shape[0]:
        v = float(np.max(_row_violation(comp.A, comp.senses_arr, comp.b, x)))
    if comp.W.size:
        v = max(v, float(np.max(_link_violation(comp, x))))
    return v


@dataclass
class GlobalResult:
    status: str
    lower_bound: float
    upper_bound: float
    x: np.ndarray | None = None
    nodes: int = 0
    pool: list = field(default_factory=list)   # [(objective, point)] distinct in integer vars

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


class _Search:
    def __init__(self, model, comp, abs_tol, rel_tol, clock):
        self.model = model
        self.comp = comp
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.clock = clock
        self.ub = math.inf
        self.best = None
        self.pool: dict[tuple, tuple[float, np.ndarray]] = {}
        self.root_width = np.where(np.isfinite(comp.hi - comp.lo), comp.hi - comp.lo, 1.0)
        self.factor_set = np.union1d(comp.La, comp.Lb)
        self.lps = 0

    def tol(self, ub):
        if not np.isfinite(ub):
            return self.abs_tol
        return max(self.abs_tol, self.rel_tol * abs(ub))

    def relax(self, lo, hi):
        """Solve the McCormick relaxation over box [lo, hi]; return (bound, x) or None."""
        comp = self.comp
        lo = lo.copy()
        hi = hi.copy()
        A = comp.A
        b = comp.b
        senses = comp.senses
        if comp.W.size:
            la, ua = lo[comp.La], hi[comp.La]
            lb, ub = lo[comp.Lb], hi[comp.Lb]
            corners = np.stack([la * lb, la * ub, ua * lb, ua * ub])
            wlo = np.maximum(lo[comp.W], corners.min(axis=0))
            whi = np.minimum(hi[comp.W], corners.max(axis=0))
            if np.any(wlo > whi + 1e-9 * np.maximum(1.0, np.abs(whi))):
                return None
            lo[comp.W] = np.minimum(wlo, whi)
            hi[comp.W] = whi
            L = comp.W.size
            mc = np.zeros((4 * L, comp.n))
            rows = np.arange(L)
            coef_a = np.stack([-lb, -ub, -lb, -ub])
            coef_b = np.stack([-la, -ua, -ua, -la])
            rhs = np.stack([-la * lb, -ua * ub, -ua * lb, -la * ub])
            for k in range(4):
                r = k * L + rows
                np.add.at(mc, (r, comp.W), 1.0)
                np.add.at(mc, (r, comp.La), coef_a[k])
                np.add.at(mc, (r, comp.Lb), coef_b[k])
            A = np.vstack([A, mc])
            b = np.concatenate([b, rhs.ravel()])
            senses = senses + [GE] * (2 * L) + [LE] * (2 * L)
        lp = LinearProgram(comp.c, A, senses, b, lo, hi, comp.constant)
        self.lps += 1
        sol = solve_lp(lp)
        if sol.status == UNBOUNDED:
            raise InfiniteBound("relaxation unbounded; declare finite bounds")
        if sol.status != OPTIMAL:
            return None
        return sol.objective, sol.x

    def is_feasible(self, x):
        comp = self.comp
        if comp.int_idx.size:
            xi = x[comp.int_idx]
            if np.any(np.abs(xi - np.round(xi)) > INT_TOL):
                return False
        if comp.W.size and np.max(_link_violation(comp, x)) > ACCEPT_TOL:
            return False
        if comp.A.shape[0] and np.max(_row_violation(comp.A, comp.senses_arr, comp.b, x)) > ACCEPT_TOL:
            return False
        return True

    def offer(self, x):
        """Record a feasible point; returns True if it improves the incumbent."""
        comp = self.comp
        x = x.copy()
        if comp.int_idx.size:
            x[comp.int_idx] = np.round(x[comp.int_idx])
        obj = float(comp.c @ x + comp.constant)
        key = tuple(x[comp.int_idx].astype(int).tolist())
        old = self.pool.get(key)
        if old is None or obj < old[0]:
            self.pool[key] = (obj, x)
        if obj < self.ub:
            self.ub = obj
            self.best = x
            return True
        return False

    def heuristic(self, lo, hi, xr):
        """Fix integers (rounded) and one factor of every link, then solve the LP."""
        comp = self.comp
        if comp.int_idx.size == 0 and comp.W.size == 0:
            return False
        improved = False
        sides = [comp.La, comp.Lb] if comp.W.size else [np.zeros(0, dtype=int)]
        tried = set()
        for side in sides:
            flo, fhi = lo.copy(), hi.copy()
            if comp.int_idx.size:
                v = np.clip(np.round(xr[comp.int_idx]), lo[comp.int_idx], hi[comp.int_idx])
                flo[comp.int_idx] = v
                fhi[comp.int_idx] = v
            if side.size:
                v = np.clip(xr[side], lo[side], hi[side])
                flo[side] = v
                fhi[side] = v
            key = (flo.tobytes(), fhi.tobytes())
            if key in tried:
                continue
            tried.add(key)
            try:
                res = self.relax(flo, fhi)
            except NumericalBreakdown:
                continue
            if res is None:
                continue
            _, x = res
            if comp.W.size:
                # polish: products from fixed factors are exact
                x = x.copy()
                x[comp.W] = x[comp.La] * x[comp.Lb]
            if self.is_feasible(x):
                improved |= self.offer(x)
        return improved

    def choose_branch(self, lo, hi, x):
        comp = self.comp
        if comp.int_idx.size:
            xi = x[comp.int_idx]
            frac = np.abs(xi - np.round(xi))
            can = (frac > INT_TOL) & (hi[comp.int_idx] > lo[comp.int_idx])
            if can.any():
                dist = np.where(can, np.abs(xi - np.floor(xi) - 0.5), np.inf)
                k = int(np.argmin(dist))
                j = int(comp.int_idx[k])
                return j, math.floor(x[j]), math.floor(x[j]) + 1
        if comp.W.size:
            raw = np.abs(x[comp.W] - x[comp.La] * x[comp.Lb])
            scaled = _link_violation(comp, x)
            order = np.lexsort((np.arange(raw.size), -raw))
            for k in order:
                if scaled[k] <= ACCEPT_TOL:
                    break
                best_j, best_rel = None, -1.0
                for j in (comp.La[k], comp.Lb[k]):
                    width = hi[j] - lo[j]
                    if width <= 1e-9 * max(1.0, abs(lo[j]), abs(hi[j])):
                        continue
                    rel = width / self.root_width[j]
                    if rel > best_rel + 1e-12:
                        best_j, best_rel = int(j), rel
                if best_j is None:
                    continue
                j = best_j
                width = hi[j] - lo[j]
                v = x[j]
                if v <= lo[j] + 1e-9 * width or v >= hi[j] - 1e-9 * width:
                    s = lo[j] + 0.5 * width
                else:
                    s = min(max(v, lo[j] + 0.2 * width), hi[j] - 0.2 * width)
                return j, s, s
        return None


def solve_global(model: FactorableModel, abs_tol: float = 1e-9, rel_tol: float = 1e-6,
                 mode: str = "exact", threshold: float | None = None,
                 time_limit: float | None = None, max_nodes: int = 200_000,
                 pool_size: int = 16, clock=time.perf_counter) -> GlobalResult:
    """Solve ``model`` (minimization) to global optimality within tolerances.

    ``mode="first_improving"`` returns as soon as an incumbent with objective
    below ``threshold`` exists; its lower bound is still valid (the smallest
    bound among open nodes).
    """
    if mode not in ("exact", "first_improving"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "first_improving" and threshold is None:
        raise ValueError("first_improving mode needs a threshold")
    comp = model.compile()
    search = _Search(model, comp, abs_tol, rel_tol, clock)
    start = clock()
    counter = itertools.count()
    heap: list = []
    stuck: list[float] = []
    n_nodes = 0

    def result(status):
        lbs = [e[0] for e in heap] + stuck
        lb = min(lbs) if lbs else search.ub
        lb = min(lb, search.ub)
        if search.best is None and status == STATUS_OPTIMAL:
            status = STATUS_INFEASIBLE
            lb = math.inf
        pool = sorted(search.pool.values(), key=lambda t: t[0])[:pool_size]
        return GlobalResult(status, lb, search.ub, search.best, n_nodes, pool)

    def evaluate(lo, hi):
        """Relax, harvest incumbents, and queue the node if still open."""
        nonlocal n_nodes
        n_nodes += 1
        res = search.relax(lo, hi)
        if res is None:
            return
        bound, x = res
        if bound >= search.ub - search.tol(search.ub):
            return
        if search.is_feasible(x):
            search.offer(x)
            return
        search.heuristic(lo, hi, x)
        if bound >= search.ub - search.tol(search.ub):
            return
        heapq.heappush(heap, (bound, next(counter), lo, hi, x))

    def improving_done():
        return mode == "first_improving" and search.ub < threshold

    evaluate(comp.lo.copy(), comp.hi.copy())
    while heap:
        if improving_done():
            lb = min(e[0] for e in heap)
            status = STATUS_OPTIMAL if search.ub - lb <= search.tol(search.ub) else STATUS_BOUNDS_ONLY
            return result(status)
        if time_limit is not None and clock() - start > time_limit:
            return result(STATUS_TIMEOUT)
        if n_nodes >= max_nodes:
            return result(STATUS_TIMEOUT)
        bound, _, lo, hi, x = heapq.heappop(heap)
        if bound >= search.ub - search.tol(search.ub):
            continue
        if search.ub - bound <= search.tol(search.ub):
            heapq.heappush(heap, (bound, next(counter), lo, hi, x))
            return result(STATUS_OPTIMAL)
        choice = search.choose_branch(lo, hi, x)
        if choice is None:
            # nothing left to branch on; the point is as feasible as this box allows
            if search.is_feasible(x) or max_violation(model, x, comp) <= 10 * ACCEPT_TOL:
                search.offer(x)
            else:
                stuck.append(bound)
            continue
        j, left_hi, right_lo = choice
        lo_l, hi_l = lo.copy(), hi.copy()
        hi_l[j] = left_hi
        lo_r, hi_r = lo.copy(), hi.copy()
        lo_r[j] = right_lo
        for clo, chi in ((lo_l, hi_l), (lo_r, hi_r)):
            if clo[j] <= chi[j]:
                evaluate(clo, chi)
    return result(STATUS_OPTIMAL)
