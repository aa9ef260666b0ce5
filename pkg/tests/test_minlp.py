import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from stochcg.lp import EQ, LE
from stochcg.minlp import (STATUS_INFEASIBLE, STATUS_OPTIMAL, DimensionMismatch,
                           FactorableModel, InfiniteBound, max_violation, mccormick_cuts,
                           solve_global)


def _holds(cuts, a, b, w, tol):
    for (cw, ca, cb), sense, rhs in cuts:
        lhs = cw * w + ca * a + cb * b
        if sense == ">=" and lhs < rhs - tol:
            return False
        if sense == "<=" and lhs > rhs + tol:
            return False
    return True


def test_unit_box_cuts():
    cuts = mccormick_cuts(0.0, 1.0, 0.0, 1.0)
    assert len(cuts) == 4
    # w >= 0 and w >= x + y - 1 at (0.5, 0.5): lower envelope is 0
    assert _holds(cuts, 0.5, 0.5, 0.0, 1e-12)
    assert not _holds(cuts, 0.5, 0.5, -0.01, 1e-12)
    assert not _holds(cuts, 0.5, 0.5, 0.51, 1e-12)


def test_shifted_box_cuts():
    cuts = mccormick_cuts(1.0, 2.0, 3.0, 4.0)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b = rng.uniform(1, 2), rng.uniform(3, 4)
        assert _holds(cuts, a, b, a * b, 1e-12)


def test_fixed_factor_collapses():
    cuts = mccormick_cuts(0.7, 0.7, -1.0, 2.0)
    for y in (-1.0, 0.3, 2.0):
        assert _holds(cuts, 0.7, y, 0.7 * y, 1e-12)
        assert not _holds(cuts, 0.7, y, 0.7 * y + 1e-9, 1e-12)


def test_infinite_box_rejected():
    m = FactorableModel()
    x = m.add_var("x", 0, np.inf)
    y = m.add_var("y", 0, 1)
    w = m.add_var("w", -10, 10, aux=True)
    m.add_link(w, x, y)
    with pytest.raises(InfiniteBound):
        solve_global(m)


def _product_min(sign, row=None):
    m = FactorableModel()
    x = m.add_var("x", 0, 1)
    y = m.add_var("y", 0, 1)
    w = m.add_var("w", -1, 1, aux=True)
    m.add_link(w, x, y)
    if row:
        m.add_row({x: 1, y: 1}, EQ, 1)
    m.set_objective({w: sign})
    return m


def test_corner_maximum():
    res = solve_global(_product_min(-1))
    assert res.status == STATUS_OPTIMAL
    assert res.upper_bound == pytest.approx(-1.0)
    assert res.x[:2] == pytest.approx([1.0, 1.0])


def test_product_on_simplex():
    res = solve_global(_product_min(1, row=True))
    assert res.upper_bound == pytest.approx(0.0, abs=1e-9)


def test_grid_oracle_quality_revenue():
    # min c d - 5 c F, F = d
    m = FactorableModel()
    c = m.add_var("c", 0, 1)
    d = m.add_var("d", 0, 2)
    F = m.add_var("F", 0, 2)
    p1 = m.add_var("cd", -10, 10, aux=True)
    p2 = m.add_var("cF", -10, 10, aux=True)
    m.add_link(p1, c, d)
    m.add_link(p2, c, F)
    m.add_row({F: 1, d: -1}, EQ, 0)
    m.set_objective({p1: 1, p2: -5})
    res = solve_global(m)
    grid = np.arange(0, 1.0005, 1e-3)
    best = min(min(cc * dd - 5 * cc * dd for dd in (0.0, 2.0)) for cc in grid)
    assert res.upper_bound == pytest.approx(best, abs=1e-3)
    assert res.lower_bound <= res.upper_bound


def test_infeasible_model():
    m = FactorableModel()
    x = m.add_var("x", 0, 1, integer=True)
    m.add_row({x: 1}, EQ, 0.5)
    assert solve_global(m).status == STATUS_INFEASIBLE


def test_max_violation():
    m = _product_min(1)
    assert max_violation(m, np.array([0.5, 0.5, 0.5])) == pytest.approx(0.25)
    assert max_violation(m, np.array([0.5, 0.4, 0.2])) == pytest.approx(0.0)
    with pytest.raises(DimensionMismatch):
        max_violation(m, np.zeros(2))


def random_bilinear(rng):
    """x factors only box-bounded, y in an LP: the optimum sits at an x-box vertex."""
    kx, ky = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    m = FactorableModel()
    xlo = rng.uniform(-1, 0.5, kx)
    xhi = xlo + rng.uniform(0.2, 2, kx)
    ylo = rng.uniform(-1, 0, ky)
    yhi = ylo + rng.uniform(0.5, 2, ky)
    X = [m.add_var(f"x{k}", xlo[k], xhi[k]) for k in range(kx)]
    Y = [m.add_var(f"y{k}", ylo[k], yhi[k]) for k in range(ky)]
    Q = rng.normal(size=(kx, ky)).round(2)
    obj = {}
    for a in range(kx):
        for b in range(ky):
            lim = max(abs(v) for v in (xlo[a] * ylo[b], xlo[a] * yhi[b], xhi[a] * ylo[b], xhi[a] * yhi[b]))
            w = m.add_var(f"w{a}{b}", -lim, lim, aux=True)
            m.add_link(w, X[a], Y[b])
            obj[w] = Q[a, b]
    cx, cy = rng.normal(size=kx).round(2), rng.normal(size=ky).round(2)
    for a in range(kx):
        obj[X[a]] = cx[a]
    for b in range(ky):
        obj[Y[b]] = cy[b]
    G = rng.normal(size=(2, ky)).round(2)
    mid = (ylo + yhi) / 2
    h = G @ mid + rng.uniform(0, 1, 2)
    for r in range(2):
        m.add_row({Y[b]: G[r, b] for b in range(ky)}, LE, h[r])
    m.set_objective(obj)

    best = np.inf
    for corner in itertools.product(*[(xlo[a], xhi[a]) for a in range(kx)]):
        xv = np.array(corner)
        cost = cy + xv @ Q
        res = linprog(cost, A_ub=G, b_ub=h, bounds=list(zip(ylo, yhi)), method="highs")
        best = min(best, res.fun + cx @ xv)
    return m, best


def test_matches_vertex_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m, best = random_bilinear(rng)
        res = solve_global(m)
        assert res.status == STATUS_OPTIMAL
        assert abs(res.upper_bound - best) <= 1e-6 * max(1.0, abs(best))
        assert res.lower_bound <= best + 1e-6 * max(1.0, abs(best))
        assert max_violation(m, res.x) <= 1e-6


def test_first_improving_returns_valid_bound():
    rng = np.random.default_rng(8)
    for _ in range(10):
        m, best = random_bilinear(rng)
        res = solve_global(m, mode="first_improving", threshold=best + 0.5)
        assert res.upper_bound < best + 0.5
        assert res.lower_bound <= best + 1e-9


def test_fixed_factors_reduce_to_lp():
    rng = np.random.default_rng(2)
    m, _ = random_bilinear(rng)
    for v in m.vars:
        if v.name.startswith("x"):
            v.lo = v.hi = (v.lo + v.hi) / 2
    res = solve_global(m)
    assert res.nodes == 1
