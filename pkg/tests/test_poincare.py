from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import polynomial as npoly

from sparsedom.dyadic import DyadicCube, RootGeometry
from sparsedom.gridfn import GridFunction
from sparsedom.inputs import power_weight, smooth_grid, uniform_grid
from sparsedom.poincare import (DegenerateCube, PoincareFamily, SmallnessFunctional, poincare_sparse,
                                poly_project, projection_sup_constant, smallness_norm, verify_self_improve)

seeds = st.integers(0, 2**40)


def cell_averages_1d(coef, N):
    """Exact cell averages of a 1-D polynomial on the N cells of [0, 1)."""
    anti = npoly.polyint(coef)
    e = np.linspace(0.0, 1.0, N + 1)
    return (npoly.polyval(e[1:], anti) - npoly.polyval(e[:-1], anti)) * N


@given(seeds, st.integers(0, 3), st.integers(1, 2))
def test_projection_reproduces_polynomials(seed, m, n):
    L = 5 if n == 1 else 3
    geo = RootGeometry(n, L)
    g = np.random.default_rng(seed)
    N = geo.cells_per_axis
    vals = np.zeros(geo.shape)
    # sum of separable terms of total degree ≤ m
    for e in itertools.product(range(m + 1), repeat=n):
        if sum(e) > m:
            continue
        term = np.ones(())
        for d in e:
            coef = np.zeros(d + 1)
            coef[d] = 1.0
            term = np.multiply.outer(term, cell_averages_1d(coef, N))
        vals += g.uniform(-1, 1) * term
    f = GridFunction(geo, vals)
    for Q in [geo.root, DyadicCube(1, (0,) * n), DyadicCube(2, (3,) * n)]:
        if 1 << (L - Q.gen) < m + 1:
            continue
        np.testing.assert_allclose(poly_project(f, Q, m), f.on(Q), atol=1e-12)


@given(seeds, st.integers(0, 2))
def test_projection_idempotent_and_contractive(seed, m):
    geo = RootGeometry(1, 5)
    f = uniform_grid(geo, seed)
    Q = geo.root
    p = poly_project(f, Q, m)
    again = poly_project(GridFunction(geo, p), Q, m)
    np.testing.assert_allclose(again, p, atol=1e-12)
    assert np.linalg.norm(p) <= np.linalg.norm(f.values) * (1 + 1e-12)
    assert math.isfinite(projection_sup_constant(f, Q, m))


def test_degree_zero_is_mean():
    geo = RootGeometry(2, 3)
    f = uniform_grid(geo, 3)
    Q = DyadicCube(1, (1, 0))
    np.testing.assert_allclose(poly_project(f, Q, 0), f.on(Q).mean(), atol=1e-14)


def test_degenerate_cube():
    geo = RootGeometry(1, 3)
    f = uniform_grid(geo, 1)
    leaf = DyadicCube(3, (2,))
    with pytest.raises(DegenerateCube):
        poly_project(f, leaf, 1)
    # rank-revealing: a single cell is reproduced exactly
    np.testing.assert_allclose(poly_project(f, leaf, 1, strict=False), f.on(leaf))


@given(seeds, st.integers(0, 1), st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]))
def test_poincare_sparse(seed, m, eta):
    geo = RootGeometry(1, 7)
    rep = poincare_sparse(uniform_grid(geo, seed), m=m, eta=eta)
    assert rep.passed and rep.engine.passed
    assert math.isfinite(rep.certified_constant)


def test_poincare_constant_nondecreasing_in_eta():
    geo = RootGeometry(1, 7)
    f = smooth_grid(geo, 5)
    ks = [poincare_sparse(f, m=1, eta=Fraction(e, 4)).coefficient_constant for e in (1, 2, 3)]
    assert ks[0] <= ks[1] <= ks[2]


def test_mq_mode():
    geo = RootGeometry(1, 6)
    rep = poincare_sparse(uniform_grid(geo, 2), m=0, mode="MQ")
    assert rep.passed
    with pytest.raises(ValueError):
        PoincareFamily(uniform_grid(geo, 2), 0, "bad")


def brute_sd(a, w, p, s, geo):
    """Max over every top cube and every nonempty antichain below it."""
    cell = float(geo.cell_measure)
    wv = w.function.values if w is not None else np.ones(geo.shape)

    def wmeas(c):
        return float(wv[geo.leaf_slice(c)].sum()) * cell

    def antichains(c):
        yield [c]
        if c.gen < geo.L:
            kids = geo.children(c)
            opts = [[[]] + list(antichains(k)) for k in kids]
            for combo in itertools.product(*opts):
                fam = [x for part in combo for x in part]
                if fam:
                    yield fam

    best = 0.0
    for k in range(geo.L + 1):
        for top in geo.cubes(k):
            for fam in antichains(top):
                A = sum(a(c) ** p * wmeas(c) for c in fam)
                B = sum(float(geo.measure(c)) for c in fam)
                if A <= 0:
                    continue
                v = (A / wmeas(top)) ** (1 / p) / ((B / float(geo.measure(top))) ** (1 / s) * a(top))
                best = max(best, v)
    return best


@given(seeds, st.sampled_from([1.0, 2.0]), st.sampled_from([1.0, 3.0]), st.booleans())
def test_smallness_exact_matches_brute(seed, p, s, weighted):
    geo = RootGeometry(1, 3)
    f = uniform_grid(geo, seed)
    osc = SmallnessFunctional.oscillation(f, 0)
    # keep a strictly positive so ratios stay finite
    a = SmallnessFunctional(geo, lambda k: osc.level(k) + 0.01)
    w = power_weight(geo, seed) if weighted else None
    res = smallness_norm(a, w, p, s)
    assert res.exact
    assert res.value == pytest.approx(brute_sd(a, w, p, s, geo), rel=1e-12)
    samp = smallness_norm(a, w, p, s, budget="sampled", samples=30, seed=seed)
    assert samp.value <= res.value * (1 + 1e-12)


def test_smallness_power_functional():
    """a(Q) = |Q|^{1/s} has SD_1^s norm exactly 1 without weight (all cubes equal ratio)."""
    geo = RootGeometry(1, 3)
    res = smallness_norm(SmallnessFunctional.power(geo, 2.0), None, 1.0, 2.0)
    assert res.value <= 1.0 + 1e-12


def test_smallness_table_and_validation():
    geo = RootGeometry(1, 2)
    a = SmallnessFunctional.table(geo, {"0:0": 2.0, "1:1": 1.0})
    assert a(geo.root) == 2.0 and a(DyadicCube(1, (0,))) == 0.0
    with pytest.raises(ValueError):
        smallness_norm(a, None, 0.5, 1.0)
    with pytest.raises(ValueError):
        SmallnessFunctional(geo, lambda k: -np.ones((1 << k,))).level(0)


@given(seeds, st.integers(0, 1), st.sampled_from([1.0, 2.0]))
def test_self_improve_weighted(seed, m, s):
    geo = RootGeometry(1, 5)
    f = uniform_grid(geo, seed)
    a = SmallnessFunctional.oscillation(f, m)
    rep = verify_self_improve(f, a, m=m, norm="weighted", p=1.0, s=s)
    assert rep.passed, rep.checks
    assert not rep.vacuous
    assert rep.factor == pytest.approx((s + 1) * rep.norm)
    assert rep.lhs <= rep.rhs * (1 + 1e-9)


@given(seeds)
def test_self_improve_ratio(seed):
    geo = RootGeometry(1, 5)
    f = uniform_grid(geo, seed)
    w = power_weight(geo, seed)
    rep = verify_self_improve(f, None, m=0, norm="ratio", w=w, p=1.0, r=2.0)
    assert rep.passed, rep.checks
    assert rep.factor == pytest.approx(2.0)
