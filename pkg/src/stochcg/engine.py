"""Column generation loop over a scenario tree."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .master import Column, MasterInfeasible, MasterModel, Origin
from .parallel import ordered_map
from .scenario_tree import ScenarioTree
from .sharing import ShareEvaluator, share_round

EXACT = "exact"
FIRST_IMPROVING = "first_improving"
GAP_GUARD = 1e-10


class EngineError(Exception):
    pass


class MissingNode(EngineError, KeyError):
    pass


class StalledInfeasible(EngineError):
    """Artificials stay positive and no node prices out a column."""


@dataclass
class PricingCandidate:
    x: tuple
    cost: float
    reduced_cost: float
    cost_is_optimal: bool = True


@dataclass
class PricingResult:
    node: int
    psi_lb: float
    psi_ub: float
    candidates: list = field(default_factory=list)
    mode: str = EXACT
    seconds: float = 0.0


class PricingOracle(Protocol):
    def price(self, node: int, state_price: np.ndarray, mu: float, mode: str, limit: int,
              exclude: frozenset = frozenset()) -> PricingResult:
        """Minimize the reduced cost at ``node``.

        ``state_price`` is ``D_n^T gamma`` so the oracle never sees row layout.
        """


@dataclass
class EngineConfig:
    eps: float = 1e-4
    max_iterations: int = 200
    time_limit: float | None = None
    sharing: bool = False
    pricing_mode: str = EXACT
    candidate_limit: int = 5
    workers: int = 1
    seed: int = 0
    share_when_stalled: tuple | None = None   # (window, min_gap_delta)
    max_penalty_growth: int = 6
    clock: object = time.perf_counter
    start: float | None = None   # clock reading the time limit counts from (default: run start)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.pricing_mode not in (EXACT, FIRST_IMPROVING):
            raise ValueError(f"unknown pricing mode {self.pricing_mode!r}")
        if self.candidate_limit < 1:
            raise ValueError("candidate_limit must be at least 1")


@dataclass
class Bounds:
    lb: float = -math.inf
    ub: float = math.inf

    @property
    def gap(self) -> float:
        return relative_gap(self.lb, self.ub)


@dataclass
class IterationRecord:
    iter: int
    z_rm: float
    lb: float
    gap: float
    cols_added: int
    cols_shared: int
    cols_discarded: int
    t_master_ms: float
    t_pricing_ms: float
    t_sharing_ms: float
    t_pricing_max_ms: float
    t_sharing_max_ms: float
    pricing_mode: str
    psi_lb: dict = field(default_factory=dict)
    artificial_mass: float = 0.0


@dataclass
class RunResult:
    status: str                    # converged | time_limit | iteration_limit
    bounds: Bounds
    objective: float | None
    incumbent: object
    relaxed: object
    iterations: list
    seconds: float

    @property
    def perfect_parallel_ms(self) -> float:
        return perfect_parallel_ms(self.iterations)


def perfect_parallel_ms(records) -> float:
    return float(sum(r.t_master_ms + r.t_pricing_max_ms + r.t_sharing_max_ms for r in records))


def relative_gap(lb: float, ub: float) -> float:
    if lb == ub:
        return 0.0
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return abs(ub - lb) / max(abs(ub), GAP_GUARD)


def update_lower_bound(bounds: Bounds, z_rm: float, psi_lb: dict, nodes) -> Bounds:
    missing = [n for n in nodes if n not in psi_lb]
    if missing:
        raise MissingNode(f"no pricing bound for nodes {missing}")
    cand = z_rm + sum(psi_lb[n] for n in nodes)
    return Bounds(max(bounds.lb, cand), bounds.ub)


class Engine:
    def __init__(self, tree: ScenarioTree, master: MasterModel, oracle: PricingOracle,
                 share_evaluator: ShareEvaluator | None = None, config: EngineConfig | None = None):
        self.tree = tree
        self.master = master
        self.oracle = oracle
        self.evaluator = share_evaluator
        self.config = config or EngineConfig()
        if self.config.sharing and share_evaluator is None:
            raise ValueError("sharing enabled without a share evaluator")
        # hooks for tests: called as on_iteration(engine, relaxed, results, record)
        self.on_iteration = None

    def _price_all(self, rm, mode):
        cfg = self.config
        clock = cfg.clock
        nodes = self.master.nodes
        pool = self.master.pool

        def job(n):
            t0 = clock()
            sp = self.master.state_price(n, rm.duals)
            exclude = frozenset(x for (m, x) in pool.tombstones if m == n)
            res = self.oracle.price(n, sp, rm.duals.mu[n], mode, cfg.candidate_limit, exclude)
            res.seconds = clock() - t0
            return res

        return dict(zip(nodes, ordered_map(job, nodes, cfg.workers)))

    def _rc_tol(self, z):
        return 1e-9 * max(1.0, abs(z))

    def run(self) -> RunResult:
        cfg = self.config
        clock = cfg.clock
        m = self.master
        start = clock() if cfg.start is None else cfg.start
        bounds = Bounds()
        records: list[IterationRecord] = []
        status = "iteration_limit"
        rm = None
        growth = 0
        gaps: list[float] = []
        for it in range(1, cfg.max_iterations + 1):
            t0 = clock()
            rm = m.solve_relaxed()
            t_master = clock() - t0
            bounds = Bounds(bounds.lb, rm.z)
            if cfg.time_limit is not None and clock() - start > cfg.time_limit:
                status = "time_limit"
                records.append(self._record(it, rm, bounds, 0, 0, 0, t_master, 0.0, 0.0, 0.0, 0.0,
                                            cfg.pricing_mode, {}))
                break

            t1 = clock()
            mode = cfg.pricing_mode
            results = self._price_all(rm, mode)
            t_pmax = max((r.seconds for r in results.values()), default=0.0)
            if mode == FIRST_IMPROVING:
                psi = {n: r.psi_lb for n, r in results.items()}
                tentative = update_lower_bound(bounds, rm.z, psi, m.nodes)
                if not any(r.candidates for r in results.values()) or tentative.gap <= cfg.eps:
                    # bound proofs need every pricing problem solved to optimality
                    mode = EXACT
                    results = self._price_all(rm, mode)
                    t_pmax += max((r.seconds for r in results.values()), default=0.0)

            tol = self._rc_tol(rm.z)
            new_cols: dict[int, list] = {}
            added = 0
            for n in m.nodes:
                cands = sorted(results[n].candidates, key=lambda c: (c.reduced_cost, c.x))
                for cand in cands[: cfg.candidate_limit]:
                    if cand.reduced_cost >= -tol:
                        continue
                    col = Column(n, cand.x, cand.cost, cand.cost_is_optimal, Origin.PRICED)
                    if m.pool.add(col).value in ("added", "replaced_cheaper"):
                        added += 1
                        new_cols.setdefault(n, []).append(m.pool.get(n, col.x))
            t_pricing = clock() - t1

            psi = {n: r.psi_lb for n, r in results.items()}
            if rm.artificial_mass <= 1e-9 * max(1.0, abs(rm.z)):
                bounds = update_lower_bound(bounds, rm.z, psi, m.nodes)
            elif added == 0:
                growth += 1
                if growth > cfg.max_penalty_growth:
                    raise StalledInfeasible("artificials persist with no improving columns")
                m.grow_penalty()

            shared = discarded = 0
            t_sharing = t_smax = 0.0
            if cfg.sharing and new_cols and self._should_share(gaps):
                t2 = clock()
                stats = share_round(new_cols, self.tree, self.evaluator, m.pool, cfg.workers, clock)
                t_sharing = clock() - t2
                t_smax = stats.max_pair_time
                shared, discarded = stats.shared, stats.discarded

            rec = self._record(it, rm, bounds, added, shared, discarded, t_master, t_pricing,
                               t_sharing, t_pmax, t_smax, mode, psi)
            records.append(rec)
            gaps.append(rec.gap)
            if self.on_iteration is not None:
                self.on_iteration(self, rm, results, rec)
            if rec.gap <= cfg.eps and rm.artificial_mass <= 1e-9 * max(1.0, abs(rm.z)):
                status = "converged"
                break
            if cfg.time_limit is not None and clock() - start > cfg.time_limit:
                status = "time_limit"
                break

        objective, incumbent = self._recover(rm)
        return RunResult(status, bounds, objective, incumbent, rm, records, clock() - start)

    def _should_share(self, gaps) -> bool:
        rule = self.config.share_when_stalled
        if rule is None:
            return True
        window, min_delta = rule
        if len(gaps) < window:
            return False
        return gaps[-window] - gaps[-1] < min_delta

    def _recover(self, rm):
        """Integer recovery over the final pool when the LP optimum is fractional."""
        if rm is None:
            return None, None
        if rm.artificial_mass > 1e-9 * max(1.0, abs(rm.z)):
            return None, None
        if rm.is_integral(self.master.u_integer):
            selection = {n: max(vals, key=lambda t: t[1])[0] for n, vals in rm.rho.items()}
            return rm.z, {"selection": selection, "u": np.round(rm.u)}
        try:
            sol = self.master.solve_integer()
        except MasterInfeasible:
            return None, None
        return sol.objective, {"selection": sol.selection, "u": sol.u}

    def _record(self, it, rm, bounds, added, shared, discarded, t_master, t_pricing, t_sharing,
                t_pmax, t_smax, mode, psi):
        return IterationRecord(it, float(rm.z), float(bounds.lb), float(bounds.gap), added,
                               shared, discarded, 1e3 * t_master, 1e3 * t_pricing,
                               1e3 * t_sharing, 1e3 * t_pmax, 1e3 * t_smax, mode, dict(psi),
                               float(rm.artificial_mass))


def run(tree, master, oracle, share_evaluator=None, config=None) -> RunResult:
    return Engine(tree, master, oracle, share_evaluator, config).run()
