"""Multistage blending with tank installation under uncertain demand bounds.

Input tanks ``i`` (capacity ``C_i``, quality ``lam_i``) feed output tanks
``j``.  A tank is installed once at some non-leaf node and then serves every
descendant.  Flows at node ``n`` earn ``f_jt(c) = m_jt c + l_jt`` per unit,
where ``c_jn`` is the blended quality, and pay transport ``r_ij`` plus
production ``b_it``.  Everything here is expressed as a minimization (the
negated profit).

Time indexing: installation at a non-leaf node of stage ``s`` pays
``q[:, s-1]``; flows at a node of stage ``s >= 2`` use period ``t = s - 1``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import EXACT, PricingCandidate, PricingResult
from .master import Column, ColumnPool, MasterModel, Origin
from .lp import EQ, GE, LE
from .minlp import STATUS_INFEASIBLE, FactorableModel, solve_global
from .scenario_tree import ScenarioTree, build_tree, siblings

GENERATOR_VERSION = "1"
DEMAND_RETRIES = 20


class BlendingError(Exception):
    pass


class InfeasibleAfterRetries(BlendingError):
    def __init__(self, node):
        super().__init__(f"capacity cannot cover minimum demand at node {node}")
        self.node = node


class SeedColumnInfeasible(BlendingError):
    pass


class RootNode(BlendingError, ValueError):
    pass


class PricingInfeasible(BlendingError):
    pass


@dataclass
class BlendingInstance:
    n_tanks: int
    n_outputs: int
    n_periods: int
    seed: int
    tree: ScenarioTree
    C: np.ndarray        # (I,)
    lam: np.ndarray      # (I,)
    q: np.ndarray        # (I, T) installation cost by period
    b: np.ndarray        # (I, T) production cost
    r: np.ndarray        # (I, J) transport cost
    m: np.ndarray        # (J, T) price slope
    l: np.ndarray        # (J, T) price intercept
    dmin: np.ndarray     # (N, J); row 0 (root) is unused
    dmax: np.ndarray     # (N, J)

    @property
    def dims(self):
        return (self.n_tanks, self.n_outputs, self.n_periods)

    def period(self, n: int) -> int:
        """0-based period column for flow data at non-root node ``n``."""
        return self.tree.stage(n) - 2

    def install_period(self, n: int) -> int:
        return self.tree.stage(n) - 1

    def margin(self, n: int) -> np.ndarray:
        """Per-unit profit of F_ij at ``n`` once quality is linearized, shape (I, J)."""
        t = self.period(n)
        return (self.m[:, t][None, :] * self.lam[:, None] + self.l[:, t][None, :]
                - self.r - self.b[:, t][:, None])

    def flow_bound(self, n: int) -> np.ndarray:
        return np.minimum(self.C[:, None], self.dmax[n][None, :])

    def to_dict(self) -> dict:
        nr = self.tree.non_root()
        return {
            "generator_version": GENERATOR_VERSION,
            "dims": {"tanks": self.n_tanks, "outputs": self.n_outputs, "periods": self.n_periods},
            "seed": self.seed,
            "tree": {"branching": list(self.tree.branching), "nodes": len(self.tree),
                     "parent": [r.parent for r in self.tree.nodes],
                     "stage": [r.stage for r in self.tree.nodes],
                     "probability": [r.probability for r in self.tree.nodes]},
            "C": self.C.tolist(), "lam": self.lam.tolist(), "q": self.q.tolist(),
            "b": self.b.tolist(), "r": self.r.tolist(), "m": self.m.tolist(), "l": self.l.tolist(),
            "dmin": {str(n): self.dmin[n].tolist() for n in nr},
            "dmax": {str(n): self.dmax[n].tolist() for n in nr},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BlendingInstance":
        if str(data.get("generator_version")) != GENERATOR_VERSION:
            raise BlendingError(f"unsupported generator version {data.get('generator_version')!r}")
        dims = data["dims"]
        tree = build_tree(data["tree"]["branching"])
        J = int(dims["outputs"])
        dmin = np.full((len(tree), J), np.nan)
        dmax = np.full((len(tree), J), np.nan)
        for k, v in data["dmin"].items():
            dmin[int(k)] = v
        for k, v in data["dmax"].items():
            dmax[int(k)] = v
        arr = lambda key: np.asarray(data[key], dtype=float)  # noqa: E731
        return cls(int(dims["tanks"]), J, int(dims["periods"]), int(data["seed"]), tree,
                   arr("C"), arr("lam"), arr("q"), arr("b"), arr("r"), arr("m"), arr("l"),
                   dmin, dmax)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def blending_tree(n_periods: int) -> ScenarioTree:
    return build_tree([1] + [2] * n_periods)


def _first_violation(C, dmin, nodes):
    need = {n: float(dmin[n].sum()) for n in nodes}
    worst = max(nodes, key=lambda n: need[n])
    return worst if need[worst] > C.sum() else None


def sample_instance(n_tanks: int, n_outputs: int, n_periods: int, seed: int,
                    tree: ScenarioTree | None = None) -> BlendingInstance:
    if min(n_tanks, n_outputs, n_periods) < 1:
        raise ValueError("dimensions must be at least 1")
    I, J, T = n_tanks, n_outputs, n_periods
    tree = tree or blending_tree(T)
    rng = np.random.default_rng(seed)
    C = rng.uniform(0.5, 3.0, I) * 1e3
    lam = rng.uniform(0.0, 1.0, I)
    q_draw = rng.uniform(200.0, 400.0, I)
    b = rng.uniform(10.0, 20.0, (I, T))
    r = rng.uniform(0.1, 0.2, (I, J))
    m = rng.uniform(20.0, 50.0, (J, T))
    l = rng.uniform(5.0, 20.0, (J, T))
    nr = list(tree.non_root())
    N = len(tree)
    for _ in range(DEMAND_RETRIES):
        dmin = np.full((N, J), np.nan)
        dmax = np.full((N, J), np.nan)
        dmin[nr] = rng.uniform(0.1, 2.0, (len(nr), J)) * 1e3
        dmax[nr] = rng.uniform(5.0, 10.0, (len(nr), J)) * 1e3
        if _first_violation(C, dmin, nr) is None:
            break
    else:
        need = max(float(dmin[n].sum()) for n in nr)
        C = C * (need / C.sum()) * (1.0 + 1e-6)
    bad = _first_violation(C, dmin, nr)
    if bad is not None:
        raise InfeasibleAfterRetries(bad)
    share = C / C.sum()
    factor = np.array([T - t + 1 for t in range(1, T + 1)], dtype=float)
    q = factor[None, :] * q_draw[:, None] * 1e3 * share[:, None]
    return BlendingInstance(I, J, T, int(seed), tree, C, lam, q, b, r, m, l, dmin, dmax)


# -- model construction ---------------------------------------------------------------

def _node_block(fm: FactorableModel, inst: BlendingInstance, n: int, cap_terms, obj: dict):
    """Flow variables and rows of one non-root node.

    ``cap_terms(i)`` returns ``(coefs, rhs)`` for the right side of the capacity
    row, i.e. capacity reads ``sum_j F_ij - coefs . vars <= rhs``.
    """
    I, J = inst.n_tanks, inst.n_outputs
    t = inst.period(n)
    p = inst.tree.probability(n)
    fhi = inst.flow_bound(n)
    c = [fm.add_var(f"c[{j},{n}]", 0.0, 1.0) for j in range(J)]
    d = [fm.add_var(f"d[{j},{n}]", inst.dmin[n, j], inst.dmax[n, j]) for j in range(J)]
    F = [[fm.add_var(f"F[{i},{j},{n}]", 0.0, fhi[i, j], implied_hi=True) for j in range(J)]
         for i in range(I)]
    P = [[fm.add_var(f"P[{i},{j},{n}]", 0.0, fhi[i, j], aux=True) for j in range(J)]
         for i in range(I)]
    Q = [fm.add_var(f"Q[{j},{n}]", 0.0, inst.dmax[n, j], aux=True) for j in range(J)]
    for j in range(J):
        coefs = {F[i][j]: inst.lam[i] for i in range(I)}
        coefs[Q[j]] = -1.0
        fm.add_row(coefs, EQ, 0.0)                                   # quality balance
        coefs = {F[i][j]: 1.0 for i in range(I)}
        coefs[d[j]] = -1.0
        fm.add_row(coefs, EQ, 0.0)                                   # demand
        coefs = {P[i][j]: 1.0 for i in range(I)}
        coefs[Q[j]] = -1.0
        fm.add_row(coefs, EQ, 0.0, aux=True)                         # c_j times demand row
        fm.add_link(Q[j], c[j], d[j])
        for i in range(I):
            fm.add_link(P[i][j], c[j], F[i][j])
    for i in range(I):
        extra, rhs = cap_terms(i)
        coefs = {F[i][j]: 1.0 for j in range(J)}
        for v, a in extra.items():
            coefs[v] = coefs.get(v, 0.0) - a
        fm.add_row(coefs, LE, rhs)                                   # capacity
    for j in range(J):
        for i in range(I):
            obj[P[i][j]] = obj.get(P[i][j], 0.0) - p * inst.m[j, t]
            lin = -p * (inst.l[j, t] - inst.r[i, j] - inst.b[i, t])
            obj[F[i][j]] = obj.get(F[i][j], 0.0) + lin
    return {"c": c, "d": d, "F": F, "P": P, "Q": Q}


def build_fullspace(inst: BlendingInstance, form: str = "x") -> FactorableModel:
    """Extensive form; ``form="w"`` adds the installed-so-far state variables."""
    if form not in ("x", "w"):
        raise ValueError("form must be 'x' or 'w'")
    tree = inst.tree
    I = inst.n_tanks
    fm = FactorableModel(f"blending-fullspace-{form}")
    obj: dict = {}
    x = {}
    for n in tree.non_leaf():
        s = inst.install_period(n)
        for i in range(I):
            x[i, n] = fm.add_var(f"x[{i},{n}]", 0.0, 1.0, integer=True)
            obj[x[i, n]] = tree.probability(n) * inst.q[i, s]
    w = {}
    if form == "w":
        for n in tree.non_root():
            for i in range(I):
                w[i, n] = fm.add_var(f"w[{i},{n}]", 0.0, 1.0, integer=True)
                coefs = {w[i, n]: 1.0}
                for a in tree.ancestors(tree.parent(n)):
                    coefs[x[i, a]] = -1.0
                fm.add_row(coefs, EQ, 0.0)
    blocks = {}
    for n in tree.non_root():
        path = tree.ancestors(tree.parent(n))
        if form == "w":
            cap = lambda i, n=n: ({w[i, n]: inst.C[i]}, 0.0)  # noqa: E731
        else:
            cap = lambda i, path=path: ({x[i, a]: inst.C[i] for a in path}, 0.0)  # noqa: E731
        blocks[n] = _node_block(fm, inst, n, cap, obj)
    for n in tree.interior():
        path = tree.ancestors(tree.parent(n))
        for i in range(I):
            if form == "w":
                fm.add_row({w[i, n]: 1.0, x[i, n]: 1.0}, LE, 1.0)
            else:
                coefs = {x[i, a]: 1.0 for a in path}
                coefs[x[i, n]] = 1.0
                fm.add_row(coefs, LE, 1.0)
    fm.set_objective(obj)
    fm.blocks = blocks
    fm.install = x
    return fm


@dataclass
class ModelSize:
    binary: int
    continuous: int
    constraints: int


def model_size(fm: FactorableModel) -> ModelSize:
    """Counts over original (non-auxiliary) variables and rows.

    Bounds count as rows: one per finite side, except implied upper bounds;
    a binary counts its domain as one.
    """
    binary = continuous = bound_rows = 0
    for v in fm.vars:
        if v.aux:
            continue
        if v.integer:
            binary += 1
            bound_rows += 1
            continue
        continuous += 1
        bound_rows += int(math.isfinite(v.lo))
        bound_rows += int(math.isfinite(v.hi) and not v.implied_hi)
    rows = sum(1 for r in fm.rows if not r[3])
    return ModelSize(binary, continuous, rows + bound_rows)


def _node_model(inst: BlendingInstance, n: int, w_fixed=None, state_price=None, mu=0.0,
                exclude=()):
    """Stand-alone node problem: pricing when ``w_fixed`` is None, else the fixed-state cost."""
    I = inst.n_tanks
    fm = FactorableModel(f"blending-node-{n}")
    obj: dict = {}
    if w_fixed is None:
        w = [fm.add_var(f"w[{i}]", 0.0, 1.0, integer=True) for i in range(I)]
        cap = lambda i: ({w[i]: inst.C[i]}, 0.0)  # noqa: E731
        for i in range(I):
            obj[w[i]] = -float(state_price[i])
        for xv in exclude:
            # no-good cut removing one binary vector
            coefs = {w[i]: (-1.0 if xv[i] else 1.0) for i in range(I)}
            fm.add_row(coefs, GE, 1.0 - sum(xv))
    else:
        w = None
        cap = lambda i: ({}, inst.C[i] * float(w_fixed[i]))  # noqa: E731
    block = _node_block(fm, inst, n, cap, obj)
    fm.set_objective(obj, -float(mu))
    fm.w = w
    fm.block = block
    return fm


def fixed_state_lp_value(inst: BlendingInstance, n: int, w) -> float | None:
    """Independent check of a column cost: the flow LP after linearizing quality."""
    from .lp import LinearProgram, OPTIMAL, solve_lp
    I, J = inst.n_tanks, inst.n_outputs
    p = inst.tree.probability(n)
    c = -p * inst.margin(n).ravel()
    A, senses, rhs = [], [], []
    for j in range(J):
        row = np.zeros(I * J)
        row[[i * J + j for i in range(I)]] = 1.0
        A += [row, row]
        senses += [GE, LE]
        rhs += [inst.dmin[n, j], inst.dmax[n, j]]
    for i in range(I):
        row = np.zeros(I * J)
        row[i * J:(i + 1) * J] = 1.0
        A.append(row)
        senses.append(LE)
        rhs.append(inst.C[i] * w[i])
    sol = solve_lp(LinearProgram(c, np.array(A), senses, np.array(rhs), np.zeros(I * J),
                                 inst.flow_bound(n).ravel()))
    return sol.objective if sol.status == OPTIMAL else None


class BlendingOracle:
    """Pricing oracle and share evaluator for one instance; pure apart from a memo."""

    def __init__(self, inst: BlendingInstance, rel_tol: float = 1e-9, time_limit=None):
        self.inst = inst
        self.rel_tol = rel_tol
        self.time_limit = time_limit
        self._memo: dict = {}

    def evaluate(self, node: int, x) -> float | None:
        if node == self.inst.tree.root:
            raise RootNode("the root has no column space")
        key = (node, tuple(int(v) for v in x))
        if key not in self._memo:
            fm = _node_model(self.inst, node, w_fixed=key[1])
            res = solve_global(fm, rel_tol=self.rel_tol, time_limit=self.time_limit)
            self._memo[key] = None if not res.has_incumbent else float(res.upper_bound)
        return self._memo[key]

    def price(self, node: int, state_price, mu: float, mode: str = EXACT, limit: int = 5,
              exclude=frozenset()) -> PricingResult:
        if node == self.inst.tree.root:
            raise RootNode("no pricing problem at the root")
        sp = np.asarray(state_price, dtype=float)
        fm = _node_model(self.inst, node, state_price=sp, mu=mu, exclude=sorted(exclude))
        scale = max(1.0, abs(mu))
        if mode == EXACT:
            res = solve_global(fm, rel_tol=self.rel_tol, time_limit=self.time_limit)
        else:
            res = solve_global(fm, rel_tol=self.rel_tol, mode="first_improving",
                               threshold=-1e-9 * scale, time_limit=self.time_limit)
        if not res.has_incumbent:
            if res.status == STATUS_INFEASIBLE:
                raise PricingInfeasible(f"no feasible state at node {node}")
            return PricingResult(node, res.lower_bound, math.inf, [], mode)
        widx = [fm.index(f"w[{i}]") for i in range(self.inst.n_tanks)]
        cands = []
        for obj, point in res.pool:
            xv = tuple(int(round(v)) for v in point[widx])
            dual_part = float(sp @ np.asarray(xv, dtype=float)) + mu
            if mode == EXACT:
                cost = self.evaluate(node, xv)
                if cost is None:
                    continue
                cands.append(PricingCandidate(xv, cost, cost - dual_part, True))
            else:
                cands.append(PricingCandidate(xv, obj + dual_part, obj, False))
        cands.sort(key=lambda c: (c.reduced_cost, c.x))
        psi_ub = min([res.upper_bound] + [c.reduced_cost for c in cands])
        psi_lb = min(res.lower_bound, psi_ub)
        return PricingResult(node, psi_lb, psi_ub, cands[:limit], mode)


def expected_value_instance(inst: BlendingInstance) -> BlendingInstance:
    """Single-path instance whose demand bounds are the per-stage means."""
    T = inst.n_periods
    path = build_tree([1] * (T + 1))
    J = inst.n_outputs
    dmin = np.full((T + 1, J), np.nan)
    dmax = np.full((T + 1, J), np.nan)
    for s in range(2, T + 2):
        nodes = list(inst.tree.stage_nodes[s - 1])
        probs = np.array([inst.tree.probability(n) for n in nodes])
        probs = probs / probs.sum()
        dmin[s - 1] = probs @ inst.dmin[nodes]
        dmax[s - 1] = probs @ inst.dmax[nodes]
    return BlendingInstance(inst.n_tanks, J, T, inst.seed, path, inst.C, inst.lam, inst.q,
                            inst.b, inst.r, inst.m, inst.l, dmin, dmax)


def expected_value_states(inst: BlendingInstance, time_limit=None) -> dict:
    """Installed-so-far vector per stage (2..T+1) from the expected-value solve."""
    ev = expected_value_instance(inst)
    fm = build_fullspace(ev)
    res = solve_global(fm, rel_tol=1e-6, time_limit=time_limit)
    if not res.has_incumbent:
        return {}
    out = {}
    installed = np.zeros(inst.n_tanks, dtype=int)
    for s in range(1, inst.n_periods + 1):
        node = s - 1
        for i in range(inst.n_tanks):
            installed[i] = min(1, installed[i] + int(round(res.x[fm.install[i, node]])))
        out[s + 1] = tuple(int(v) for v in installed)
    return out


@dataclass
class BlendingMaster:
    master: MasterModel
    x_index: dict          # (i, n) -> u position
    rows_interior: list    # [(i, n)] for the install-once rows
    rows_path: list        # [(i, n)] for the state-definition rows


def build_master(inst: BlendingInstance, oracle: BlendingOracle | None = None,
                 ev_seeds: bool = True, complete: bool = False) -> BlendingMaster:
    """Master over installation decisions with all-ones and expected-value seeds.

    ``complete=True`` seeds every feasible state vector at every node instead,
    which makes the restricted master the full one (useful on tiny trees).
    """
    tree = inst.tree
    I = inst.n_tanks
    oracle = oracle or BlendingOracle(inst)
    x_index = {}
    u_cost = []
    for n in tree.non_leaf():
        for i in range(I):
            x_index[i, n] = len(u_cost)
            u_cost.append(tree.probability(n) * inst.q[i, inst.install_period(n)])
    nu = len(u_cost)
    rows_interior = [(i, n) for n in tree.interior() for i in range(I)]
    rows_path = [(i, n) for n in tree.non_root() for i in range(I)]
    nl = len(rows_interior) + len(rows_path)
    A = np.zeros((nl, nu))
    senses = [LE] * len(rows_interior) + [EQ] * len(rows_path)
    rhs = np.concatenate([np.ones(len(rows_interior)), np.zeros(len(rows_path))])
    D = {n: np.zeros((nl, I)) for n in tree.non_root()}
    for r, (i, n) in enumerate(rows_interior):
        A[r, x_index[i, n]] = 1.0
        D[n][r, i] = 1.0
    off = len(rows_interior)
    for k, (i, n) in enumerate(rows_path):
        r = off + k
        for a in tree.ancestors(tree.parent(n)):
            A[r, x_index[i, a]] = -1.0
        D[n][r, i] = 1.0
    pool = ColumnPool({n: (np.zeros(I, dtype=int), np.ones(I, dtype=int)) for n in tree.non_root()})

    if complete:
        for n in tree.non_root():
            for xv in itertools.product((0, 1), repeat=I):
                cost = oracle.evaluate(n, xv)
                if cost is not None:
                    pool.add(Column(n, xv, cost, True, Origin.INITIAL))
    else:
        ones = (1,) * I
        for n in tree.non_root():
            cost = oracle.evaluate(n, ones)
            if cost is None:
                raise SeedColumnInfeasible(f"all-ones column infeasible at node {n}")
            pool.add(Column(n, ones, cost, True, Origin.INITIAL))
        if ev_seeds:
            states = expected_value_states(inst)
            for s, xv in states.items():
                for parent in tree.stage_nodes[s - 2]:
                    family = list(tree.children(parent))
                    costs = [oracle.evaluate(n, xv) for n in family]
                    if any(c is None for c in costs):
                        continue
                    for n, cost in zip(family, costs):
                        pool.add(Column(n, xv, cost, True, Origin.INITIAL))
    master = MasterModel(u_cost, np.zeros(nu), np.ones(nu), np.ones(nu, dtype=bool), A, senses,
                         rhs, D, pool)
    return BlendingMaster(master, x_index, rows_interior, rows_path)


def complete_states(inst: BlendingInstance, oracle: BlendingOracle, family_feasible=False) -> dict:
    """Every feasible state vector per node; optionally only those feasible at all siblings."""
    tree = inst.tree
    out = {}
    for n in tree.non_root():
        keep = []
        for xv in itertools.product((0, 1), repeat=inst.n_tanks):
            if oracle.evaluate(n, xv) is None:
                continue
            if family_feasible and any(oracle.evaluate(s, xv) is None for s in siblings(tree, n)):
                continue
            keep.append(xv)
        out[n] = keep
    return out
