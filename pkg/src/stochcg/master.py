"""Restricted Dantzig-Wolfe master problem and its column pool.

Linking rows read ``A u + sum_n D_n (sum_k rho_nk x_nk) {<=,=,>=} b``; each
node that owns columns also gets a convexity row ``sum_k rho_nk = 1``.
Everything is minimized.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lp import EQ, GE, LE, OPTIMAL, LinearProgram, solve_lp
from .minlp import FactorableModel, solve_global


class MasterError(Exception):
    pass


class EmptyPool(MasterError):
    def __init__(self, node):
        super().__init__(f"node {node} has no columns")
        self.node = node


class BoundsViolation(MasterError, ValueError):
    pass


class MasterInfeasible(MasterError):
    pass


class Origin(str, enum.Enum):
    INITIAL = "initial"
    PRICED = "priced"
    SHARED = "shared"


class AddOutcome(str, enum.Enum):
    ADDED = "added"
    REPLACED_CHEAPER = "replaced_cheaper"
    DEDUPED_KEPT = "deduped_kept"
    BLOCKED = "blocked"   # tombstoned (node, x) pair


@dataclass
class Column:
    node: int
    x: tuple
    cost: float
    cost_is_optimal: bool = True
    origin: Origin = Origin.INITIAL

    def __post_init__(self):
        self.x = tuple(int(v) for v in self.x)
        self.origin = Origin(self.origin)


class ColumnPool:
    """Columns per node keyed by state vector; insertion order is preserved."""

    def __init__(self, state_bounds: dict):
        self.state_bounds = {n: (np.asarray(lo), np.asarray(hi)) for n, (lo, hi) in state_bounds.items()}
        self.columns: dict[int, dict[tuple, Column]] = {n: {} for n in sorted(state_bounds)}
        self.tombstones: set[tuple[int, tuple]] = set()

    @property
    def nodes(self):
        return list(self.columns)

    def __len__(self):
        return sum(len(c) for c in self.columns.values())

    def get(self, node, x) -> Column | None:
        return self.columns[node].get(tuple(x))

    def node_columns(self, node) -> list:
        return list(self.columns[node].values())

    def add(self, col: Column) -> AddOutcome:
        if col.node not in self.columns:
            raise BoundsViolation(f"node {col.node} has no column space")
        lo, hi = self.state_bounds[col.node]
        x = np.array(col.x)
        if x.size != lo.size or np.any(x < lo) or np.any(x > hi):
            raise BoundsViolation(f"column {col.x} outside state bounds of node {col.node}")
        if (col.node, col.x) in self.tombstones:
            return AddOutcome.BLOCKED
        pool = self.columns[col.node]
        old = pool.get(col.x)
        if old is None:
            pool[col.x] = col
            return AddOutcome.ADDED
        flag = old.cost_is_optimal or col.cost_is_optimal
        if col.cost < old.cost:
            old.cost = col.cost
            old.cost_is_optimal = flag
            return AddOutcome.REPLACED_CHEAPER
        old.cost_is_optimal = flag
        return AddOutcome.DEDUPED_KEPT

    def remove(self, node, x):
        self.columns[node].pop(tuple(x), None)

    def discard(self, nodes, x):
        """Remove ``x`` at every node listed and block it from coming back."""
        x = tuple(x)
        for n in nodes:
            if n in self.columns:
                self.remove(n, x)
                self.tombstones.add((n, x))

    def origin_histogram(self) -> dict:
        hist = {o.value: 0 for o in Origin}
        for cols in self.columns.values():
            for c in cols.values():
                hist[c.origin.value] += 1
        return hist


@dataclass
class DualPrices:
    gamma: np.ndarray
    mu: dict          # node -> convexity dual


@dataclass
class RelaxedMasterSolution:
    z: float
    u: np.ndarray
    rho: dict                 # node -> list[(x, value)]
    duals: DualPrices
    artificial_mass: float

    def is_integral(self, u_integer, tol=1e-6) -> bool:
        if any(abs(v - round(v)) > tol for vals in self.rho.values() for _, v in vals):
            return False
        ui = self.u[u_integer]
        return bool(np.all(np.abs(ui - np.round(ui)) <= tol))


@dataclass
class IntegerMasterSolution:
    objective: float
    selection: dict           # node -> chosen x tuple
    u: np.ndarray
    column_costs: dict = field(default_factory=dict)


class MasterModel:
    def __init__(self, u_cost, u_lo, u_hi, u_integer, A, senses, b, D: dict, pool: ColumnPool,
                 penalty: float | None = None):
        self.u_cost = np.asarray(u_cost, dtype=float)
        self.u_lo = np.asarray(u_lo, dtype=float)
        self.u_hi = np.asarray(u_hi, dtype=float)
        self.u_integer = np.asarray(u_integer, dtype=bool)
        self.senses = list(senses)
        self.b = np.asarray(b, dtype=float)
        self.A = np.asarray(A, dtype=float).reshape(self.b.size, self.u_cost.size)
        self.D = {n: np.asarray(d, dtype=float) for n, d in D.items()}
        self.pool = pool
        self.penalty = penalty
        if set(self.D) != set(pool.nodes):
            raise ValueError("D mappings and pool nodes disagree")

    @property
    def nodes(self):
        return self.pool.nodes

    @property
    def n_link(self) -> int:
        return self.b.size

    def column_vector(self, col: Column) -> np.ndarray:
        return self.D[col.node] @ np.asarray(col.x, dtype=float)

    def state_price(self, node, duals: DualPrices) -> np.ndarray:
        """``D_n^T gamma``: the dual value of one unit of each state component."""
        return self.D[node].T @ duals.gamma

    def reduced_cost(self, col: Column, duals: DualPrices) -> float:
        return reduced_cost(col, duals, self.D)

    def _ensure_penalty(self):
        if self.penalty is None:
            costs = [abs(c.cost) for n in self.nodes for c in self.pool.node_columns(n)]
            costs += list(np.abs(self.u_cost))
            big = max(costs, default=0.0) + float(np.max(np.abs(self.b), initial=0.0))
            self.penalty = 1e3 * max(big, 1.0)
        return self.penalty

    def grow_penalty(self):
        self.penalty = self._ensure_penalty() * 10.0

    def _columns(self):
        cols = []
        for n in self.nodes:
            pool = self.pool.node_columns(n)
            if not pool:
                raise EmptyPool(n)
            cols.extend(pool)
        return cols

    def _structural(self, cols):
        n_u = self.u_cost.size
        n_nodes = len(self.nodes)
        node_row = {n: self.n_link + k for k, n in enumerate(self.nodes)}
        m = self.n_link + n_nodes
        A = np.zeros((m, n_u + len(cols)))
        A[: self.n_link, :n_u] = self.A
        for k, col in enumerate(cols):
            A[: self.n_link, n_u + k] = self.column_vector(col)
            A[node_row[col.node], n_u + k] = 1.0
        c = np.concatenate([self.u_cost, [col.cost for col in cols]])
        senses = self.senses + [EQ] * n_nodes
        b = np.concatenate([self.b, np.ones(n_nodes)])
        lo = np.concatenate([self.u_lo, np.zeros(len(cols))])
        # rho <= 1 follows from convexity; an explicit bound would absorb reduced cost
        hi = np.concatenate([self.u_hi, np.full(len(cols), np.inf)])
        return A, c, senses, b, lo, hi

    def solve_relaxed(self) -> RelaxedMasterSolution:
        cols = self._columns()
        A, c, senses, b, lo, hi = self._structural(cols)
        M = self._ensure_penalty()
        m = A.shape[0]
        art = []
        for r, s in enumerate(senses):
            if s in (LE, EQ):
                art.append((r, -1.0))
            if s in (GE, EQ):
                art.append((r, 1.0))
        Art = np.zeros((m, len(art)))
        for k, (r, sign) in enumerate(art):
            Art[r, k] = sign
        lp = LinearProgram(np.concatenate([c, np.full(len(art), M)]), np.hstack([A, Art]), senses,
                           b, np.concatenate([lo, np.zeros(len(art))]),
                           np.concatenate([hi, np.full(len(art), np.inf)]))
        sol = solve_lp(lp)
        if sol.status != OPTIMAL:
            raise MasterError(f"relaxed master returned {sol.status}")
        n_u = self.u_cost.size
        nstruct = c.size
        x = sol.x
        rho = {n: [] for n in self.nodes}
        for k, col in enumerate(cols):
            rho[col.node].append((col.x, float(x[n_u + k])))
        duals = DualPrices(sol.duals[: self.n_link].copy(),
                           {n: float(sol.duals[self.n_link + k]) for k, n in enumerate(self.nodes)})
        return RelaxedMasterSolution(sol.objective, x[:n_u].copy(), rho, duals,
                                     float(np.sum(x[nstruct:])))

    def solve_integer(self, time_limit=None) -> IntegerMasterSolution:
        """Restricted master with integral rho and u, no artificials."""
        cols = self._columns()
        A, c, senses, b, lo, hi = self._structural(cols)
        n_u = self.u_cost.size
        fm = FactorableModel("integer-master")
        for j in range(n_u):
            fm.add_var(f"u{j}", self.u_lo[j], self.u_hi[j], integer=bool(self.u_integer[j]))
        for k, col in enumerate(cols):
            fm.add_var(f"rho{col.node}_{k}", 0.0, 1.0, integer=True)
        for r in range(A.shape[0]):
            nz = np.flatnonzero(A[r])
            fm.add_row({int(j): A[r, j] for j in nz}, senses[r], b[r])
        fm.set_objective({j: c[j] for j in range(c.size) if c[j] != 0.0})
        res = solve_global(fm, time_limit=time_limit)
        if not res.has_incumbent:
            raise MasterInfeasible("restricted pool admits no integer-feasible selection")
        x = res.x
        selection = {}
        costs = {}
        for k, col in enumerate(cols):
            if x[n_u + k] > 0.5:
                selection[col.node] = col.x
                costs[col.node] = col.cost
        return IntegerMasterSolution(res.upper_bound, selection, x[:n_u].copy(), costs)


def reduced_cost(col: Column, duals: DualPrices, D: dict) -> float:
    """``cost - gamma^T D_n x - mu_n``."""
    Dn = np.asarray(D[col.node], dtype=float)
    x = np.asarray(col.x, dtype=float)
    if Dn.shape[1] != x.size or Dn.shape[0] != np.asarray(duals.gamma).size:
        raise ValueError("DimensionMismatch: D_n, gamma and x disagree")
    return float(col.cost - np.asarray(duals.gamma) @ (Dn @ x) - duals.mu[col.node])
