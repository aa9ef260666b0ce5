import numpy as np
import pytest

from stochcg.master import AddOutcome, Column, ColumnPool, Origin
from stochcg.scenario_tree import build_tree, sharing_capacity, siblings
from stochcg.sharing import ShareStatus, share_from, share_round


class TableEvaluator:
    """Feasibility and cost looked up from a table; counts calls."""

    def __init__(self, infeasible=(), cost=1.0):
        self.infeasible = set(infeasible)
        self.cost = cost
        self.calls = []

    def evaluate(self, node, x):
        self.calls.append((node, tuple(x)))
        if (node, tuple(x)) in self.infeasible:
            return None
        return self.cost + node


class Failing:
    def evaluate(self, node, x):
        raise RuntimeError("boom")


def _pool(tree, dim=3):
    return ColumnPool({n: (np.zeros(dim, dtype=int), np.ones(dim, dtype=int))
                       for n in tree.non_root()})


def test_skip_when_sibling_holds_optimal_copy():
    tree = build_tree([1, 2])
    pool = _pool(tree)
    col = Column(1, (1, 0, 1), -3.0, True, Origin.PRICED)
    pool.add(col)
    pool.add(Column(2, (1, 0, 1), 7.0, True))
    ev = TableEvaluator()
    out = share_from(1, col, tree, ev, pool)
    assert out.results == [(2, ShareStatus.SKIPPED_DUPLICATE, None)]
    assert ev.calls == [] and len(pool) == 2


def test_infeasible_first_sibling_discards_everywhere():
    tree = build_tree([1, 4])
    pool = _pool(tree)
    col = Column(1, (1, 1, 0), -1.0, True, Origin.PRICED)
    pool.add(col)
    ev = TableEvaluator(infeasible={(2, (1, 1, 0))})
    out = share_from(1, col, tree, ev, pool)
    assert out.discarded
    assert ev.calls == [(2, (1, 1, 0))]
    assert all(pool.get(n, col.x) is None for n in (1, 2, 3, 4))
    assert pool.add(Column(3, col.x, 0.0)) == AddOutcome.BLOCKED


def test_feasible_stage_three_gets_three_copies():
    tree = build_tree([1, 2, 4, 2])
    origin = tree.stage_nodes[2][0]
    pool = _pool(tree)
    col = Column(origin, (0, 1, 1), -2.0, True, Origin.PRICED)
    pool.add(col)
    out = share_from(origin, col, tree, TableEvaluator(), pool)
    assert out.shared == 3 == len(siblings(tree, origin))
    for s in siblings(tree, origin):
        got = pool.get(s, col.x)
        assert got.origin == Origin.SHARED and got.x == col.x and got.cost_is_optimal


def test_round_bounds_and_trivia():
    tree = build_tree([1, 2, 4, 2])
    pool = _pool(tree)
    new = {}
    for n in tree.non_root():
        col = Column(n, (n % 2, 1, 0), -1.0, True, Origin.PRICED)
        pool.add(col)
        new[n] = [col]
    stats = share_round(new, tree, TableEvaluator(), pool)
    assert stats.shared <= sharing_capacity(tree) == 42
    ev = TableEvaluator()
    empty = share_round({}, tree, ev, _pool(tree))
    assert empty.shared == 0 and ev.calls == []


def test_root_has_nobody_to_share_with():
    tree = build_tree([1, 2])
    pool = ColumnPool({0: (np.zeros(1, dtype=int), np.ones(1, dtype=int))})
    col = Column(0, (1,), 0.0)
    pool.add(col)
    ev = TableEvaluator()
    out = share_from(0, col, tree, ev, pool)
    assert out.results == [] and ev.calls == []


def test_evaluator_failure_keeps_column():
    tree = build_tree([1, 3])
    pool = _pool(tree)
    col = Column(1, (1, 1, 1), -1.0, True, Origin.PRICED)
    pool.add(col)
    out = share_from(1, col, tree, Failing(), pool)
    assert out.failed and pool.get(1, col.x) is not None and len(pool) == 1


def test_concurrent_round_matches_sequential():
    tree = build_tree([1, 3, 2])
    results = []
    for workers in (1, 3):
        pool = _pool(tree, dim=2)
        new = {}
        for n in tree.non_root():
            col = Column(n, (n % 2, 1), -1.0, True, Origin.PRICED)
            pool.add(col)
            new[n] = [col]
        ev = TableEvaluator(infeasible={(2, (1, 1)), (5, (0, 1))})
        share_round(new, tree, ev, pool, workers=workers)
        results.append({n: sorted((c.x, c.cost, c.origin.value) for c in pool.node_columns(n))
                        for n in pool.nodes})
    assert results[0] == results[1]


def _random_case(rng):
    R = [1] + [int(v) for v in rng.integers(1, 5, size=int(rng.integers(1, 4)))]
    tree = build_tree(R)
    dim = int(rng.integers(1, 4))
    pool = _pool(tree, dim)
    vecs = [tuple(int(v) for v in rng.integers(0, 2, dim)) for _ in range(6)]
    new = {}
    held = {}
    for n in tree.non_root():
        # pre-existing columns, some with optimal costs
        for x in rng.choice(len(vecs), size=int(rng.integers(0, 3)), replace=False):
            pool.add(Column(n, vecs[x], float(rng.uniform(0, 5)), bool(rng.random() < 0.5)))
        held[n] = {c.x: c.cost_is_optimal for c in pool.node_columns(n)}
        if rng.random() < 0.7:
            x = vecs[int(rng.integers(len(vecs)))]
            if x in held[n]:
                continue
            col = Column(n, x, -float(rng.uniform(0, 1)), True, Origin.PRICED)
            pool.add(col)
            new[n] = [col]
            held[n][x] = True
    infeasible = {(n, v) for n in tree.non_root() for v in vecs if rng.random() < 0.15}
    return tree, pool, new, held, infeasible


def test_algorithm_properties_on_random_pools():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        tree, pool, new, held, infeasible = _random_case(rng)
        ev = TableEvaluator(infeasible)
        before = {n: set(pool.columns[n]) for n in pool.nodes}
        stats = share_round(new, tree, ev, pool)
        # (d) shared count bounded by the tree's capacity per column per node
        assert stats.shared <= sharing_capacity(tree) * 1
        for out in stats.outcomes:
            sibs = siblings(tree, out.origin)
            for s, status, _ in out.results:
                if status == ShareStatus.ADDED:
                    # (a) the copy carries exactly the origin's vector
                    assert pool.get(s, out.x) is not None or out.discarded
                if status == ShareStatus.SKIPPED_DUPLICATE:
                    # (b) skipped siblings already held the vector at its optimal cost
                    assert held[s].get(out.x) is True
            if out.discarded:
                # (c) gone from origin and every sibling, and blocked from returning
                for n in (out.origin, *sibs):
                    assert pool.get(n, out.x) is None
                    assert (n, out.x) in pool.tombstones
        for n in pool.nodes:
            for x, c in pool.columns[n].items():
                if c.origin == Origin.SHARED and x not in before[n]:
                    origins = [o for o in new if x == new[o][0].x and n in siblings(tree, o)]
                    assert origins
