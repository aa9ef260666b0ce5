"""Sharing freshly priced columns with sibling nodes."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Protocol

from .master import AddOutcome, Column, ColumnPool, Origin
from .parallel import ordered_map
from .scenario_tree import ScenarioTree, siblings


class EvaluatorFailure(RuntimeError):
    pass


class ShareEvaluator(Protocol):
    def evaluate(self, node: int, x: tuple) -> float | None:
        """Optimal min-sense cost of ``x`` fixed at ``node``; None if infeasible."""


class ShareStatus(str, enum.Enum):
    SKIPPED_DUPLICATE = "skipped_duplicate"
    ADDED = "added"
    INFEASIBLE_DISCARD_ALL = "infeasible_discard_all"


@dataclass
class ShareOutcome:
    origin: int
    x: tuple
    results: list = field(default_factory=list)   # [(sibling, ShareStatus, cost or None)]
    shared: int = 0
    discarded: bool = False
    failed: bool = False
    evaluations: int = 0


@dataclass
class ShareRoundStats:
    shared: int = 0
    discarded: int = 0
    skipped: int = 0
    failed: int = 0
    evaluations: int = 0
    pair_times: list = field(default_factory=list)   # seconds per evaluated (origin, sibling, x)
    outcomes: list = field(default_factory=list)

    @property
    def max_pair_time(self) -> float:
        return max(self.pair_times, default=0.0)


def _needs_eval(pool: ColumnPool, sib: int, x: tuple) -> bool:
    held = pool.get(sib, x)
    return not (held is not None and held.cost_is_optimal)


def _apply(origin: int, col: Column, sibs, evals: dict, pool: ColumnPool) -> ShareOutcome:
    """Apply precomputed evaluations for one column in sibling order.

    Shared copies are staged and only committed once no sibling reported
    infeasibility, so a discard never leaves partial copies behind.
    """
    out = ShareOutcome(origin, col.x)
    staged = []
    for s in sibs:
        if s not in evals:
            out.results.append((s, ShareStatus.SKIPPED_DUPLICATE, None))
            continue
        out.evaluations += 1
        res = evals[s]
        if isinstance(res, Exception):
            out.failed = True
            out.results.append((s, "failed", None))
            return out
        if res is None:
            out.results.append((s, ShareStatus.INFEASIBLE_DISCARD_ALL, None))
            out.discarded = True
            pool.discard([origin, *sibs], col.x)
            return out
        staged.append((s, res))
    for s, cost in staged:
        kind = pool.add(Column(s, col.x, cost, True, Origin.SHARED))
        if kind in (AddOutcome.ADDED, AddOutcome.REPLACED_CHEAPER):
            out.shared += 1
        out.results.append((s, ShareStatus.ADDED, cost))
    return out


def share_from(origin: int, col: Column, tree: ScenarioTree, evaluator: ShareEvaluator,
               pool: ColumnPool) -> ShareOutcome:
    """Share one column sequentially; stops at the first infeasible sibling."""
    sibs = siblings(tree, origin)
    evals = {}
    for s in sibs:
        if not _needs_eval(pool, s, col.x):
            continue
        try:
            res = evaluator.evaluate(s, col.x)
        except Exception as exc:  # noqa: BLE001 - surfaced as a failed share
            evals[s] = EvaluatorFailure(str(exc))
            break
        evals[s] = res
        if res is None:
            break
    return _apply(origin, col, sibs, evals, pool)


def share_round(new_columns: dict, tree: ScenarioTree, evaluator: ShareEvaluator,
                pool: ColumnPool, workers: int = 1, clock=None) -> ShareRoundStats:
    """Share every new column; evaluations may run concurrently, application is ordered.

    ``new_columns`` maps an origin node to the columns it priced this round.
    """
    clock = clock or time.perf_counter
    jobs = []
    for origin in sorted(new_columns):
        sibs = siblings(tree, origin)
        for k, col in enumerate(new_columns[origin]):
            for s in sibs:
                if _needs_eval(pool, s, col.x):
                    jobs.append((origin, s, k, col.x))

    def run(job):
        _, s, _, x = job
        t0 = clock()
        try:
            res = evaluator.evaluate(s, x)
        except Exception as exc:  # noqa: BLE001
            res = EvaluatorFailure(str(exc))
        return res, clock() - t0

    results = ordered_map(run, jobs, workers)
    by_col: dict = {}
    stats = ShareRoundStats()
    for (origin, s, k, _), (res, dt) in zip(jobs, results):
        by_col.setdefault((origin, k), {})[s] = res
        stats.pair_times.append(dt)
    for origin in sorted(new_columns):
        sibs = siblings(tree, origin)
        for k, col in enumerate(new_columns[origin]):
            evals = by_col.get((origin, k), {})
            # drop evaluations past the first infeasible sibling, as a sequential pass would
            trimmed = {}
            for s in sibs:
                if s in evals:
                    trimmed[s] = evals[s]
                    if evals[s] is None or isinstance(evals[s], Exception):
                        break
            out = _apply(origin, col, sibs, trimmed, pool)
            stats.outcomes.append(out)
            stats.shared += out.shared
            stats.discarded += int(out.discarded)
            stats.failed += int(out.failed)
            stats.evaluations += out.evaluations
            stats.skipped += sum(1 for r in out.results if r[1] == ShareStatus.SKIPPED_DUPLICATE)
    return stats
