import math

import numpy as np
import pytest

from conftest import run_method, tiny_instance
from oracles import brute_force_fullspace
from stochcg import blending
from stochcg.engine import (Bounds, Engine, EngineConfig, MissingNode, PricingResult,
                            StalledInfeasible, perfect_parallel_ms, relative_gap,
                            update_lower_bound)
from stochcg.lp import EQ
from stochcg.master import Column, ColumnPool, MasterModel


def test_update_lower_bound():
    b = update_lower_bound(Bounds(), 10.0, {1: -1.0, 2: -2.0}, [1, 2])
    assert b.lb == 7.0
    b = update_lower_bound(Bounds(8.0, 10.0), 10.0, {1: -1.0, 2: -2.0}, [1, 2])
    assert b.lb == 8.0
    b = update_lower_bound(Bounds(ub=10.0), 10.0, {1: 0.0, 2: 0.0}, [1, 2])
    assert b.lb == 10.0 and b.gap == 0.0
    with pytest.raises(MissingNode):
        update_lower_bound(Bounds(), 10.0, {1: 0.0}, [1, 2])


def test_relative_gap():
    assert relative_gap(99.99, 100.0) == pytest.approx(1e-4)
    assert relative_gap(5.0, 5.0) == 0.0
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(-math.inf, 3.0) == math.inf


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(eps=0.0)
    with pytest.raises(ValueError):
        EngineConfig(pricing_mode="greedy")


def test_complete_pools_converge_immediately():
    inst = tiny_instance(1)
    oracle = blending.BlendingOracle(inst)
    bm = blending.build_master(inst, oracle, complete=True)
    res = Engine(inst.tree, bm.master, oracle).run()
    assert res.status == "converged"
    assert len(res.iterations) == 1
    assert res.iterations[0].gap <= 1e-12
    assert all(abs(v) <= 1e-6 * max(1.0, abs(res.bounds.ub)) for v in res.iterations[0].psi_lb.values())


@pytest.mark.parametrize("seed", [0, 3])
def test_exact_pricing_reaches_fullspace_optimum(seed):
    inst = tiny_instance(seed)
    res, _ = run_method(inst, sharing=False)
    ref = brute_force_fullspace(inst)
    assert res.status == "converged"
    assert res.bounds.gap <= 1e-4
    assert res.objective == pytest.approx(ref, rel=1e-6)
    assert len(res.iterations) <= 50


def test_first_improving_bounds_stay_below_optimum():
    inst = tiny_instance(2)
    res, _ = run_method(inst, sharing=False, mode="first_improving")
    ref = brute_force_fullspace(inst)
    for rec in res.iterations:
        assert rec.lb <= ref + 1e-7 * abs(ref)
    assert res.iterations[-1].pricing_mode == "exact"


def test_deterministic_logs_across_workers():
    inst = tiny_instance(4)
    logs = []
    for workers in (1, 2, 3):
        res, _ = run_method(inst, sharing=True, workers=workers, clock=lambda: 0.0)
        logs.append([(r.z_rm, r.lb, r.cols_added, r.cols_shared, r.cols_discarded)
                     for r in res.iterations])
    assert logs[0] == logs[1] == logs[2]


def test_perfect_parallel_is_sum_of_slowest_jobs():
    res, _ = run_method(tiny_instance(0), sharing=True)
    expect = sum(r.t_master_ms + r.t_pricing_max_ms + r.t_sharing_max_ms for r in res.iterations)
    assert res.perfect_parallel_ms == pytest.approx(expect)
    assert perfect_parallel_ms(res.iterations) == pytest.approx(expect)


def test_time_limit_keeps_valid_bounds():
    inst = tiny_instance(0)
    ticks = iter(range(10**6))
    res, _ = run_method(inst, sharing=False, time_limit=0.5, clock=lambda: float(next(ticks)))
    assert res.status == "time_limit"
    assert res.bounds.lb == -math.inf
    assert math.isfinite(res.bounds.ub)


class _NoColumns:
    def price(self, node, state_price, mu, mode, limit, exclude=frozenset()):
        return PricingResult(node, 0.0, 0.0, [], mode)


def test_stalled_infeasible():
    pool = ColumnPool({1: (np.zeros(1, dtype=int), np.ones(1, dtype=int)),
                       2: (np.zeros(1, dtype=int), np.ones(1, dtype=int))})
    pool.add(Column(1, (1,), 0.0))
    pool.add(Column(2, (0,), 0.0))
    D = {1: np.array([[1.0]]), 2: np.array([[-1.0]])}
    m = MasterModel([], [], [], [], np.zeros((1, 0)), [EQ], [0.0], D, pool)
    from stochcg.scenario_tree import build_tree
    with pytest.raises(StalledInfeasible):
        Engine(build_tree([1, 2]), m, _NoColumns(), config=EngineConfig(max_penalty_growth=2)).run()


def test_monotone_bounds():
    for seed in (0, 1):
        res, _ = run_method(tiny_instance(seed), sharing=True, mode="first_improving")
        zs = [r.z_rm for r in res.iterations]
        lbs = [r.lb for r in res.iterations]
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(zs, zs[1:]))
        assert all(b >= a for a, b in zip(lbs, lbs[1:]))
        assert all(lb <= z + 1e-7 * abs(z) for lb, z in zip(lbs, zs))
