from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from sparsedom.dyadic import DyadicCube, RootGeometry
from sparsedom.family import check_ellr
from sparsedom.inputs import halfspace_tube, halfspace_uniform
from sparsedom.tent import (PAD, HalfSpaceFunction, TentFamily, TentField, carleson_functional, cone_functional,
                            cone_weights, tent_good_lambda, tent_sparse, truncated_cone)

seeds = st.integers(0, 2**40)


def phi_sq(rho):
    """Φ(ρ)² for the cutoff equal to 1 below 1, cos²(π(ρ-1)/2) on [1, 2], 0 beyond."""
    if rho < 1:
        return 1.0
    if rho > 2:
        return 0.0
    return math.cos(math.pi * (rho - 1) / 2) ** 4


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("profile", ["indicator", "phi2"])
def test_cone_weights_match_quadrature(n, profile):
    h, t_lo, t_hi, a = 1 / 16, 0.25, 0.5, 1.5
    R = 12
    W = cone_weights(n, h, t_lo, t_hi, a, profile, R)
    for d in [(0,) * n, (3,) + (0,) * (n - 1), (5,) * n, (7,) + (2,) * (n - 1), (11,) * n]:
        dist = h * math.sqrt(sum(x * x for x in d))
        if profile == "indicator":
            g = (lambda t: 1.0 if dist < a * t else 0.0)
        else:
            g = (lambda t: phi_sq(dist / (a * t)))
        pts = [p for p in (dist / a, dist / (2 * a)) if t_lo < p < t_hi]
        ref, _ = quad(lambda t: g(t) / t ** (n + 1), t_lo, t_hi, points=pts or None, epsabs=1e-14, epsrel=1e-13)
        assert W[tuple(x + R for x in d)] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_cone_single_band_oracle():
    """F = 1 on the analysis root in band [1/2, 1); A² by quadrature per cell."""
    geo = RootGeometry(1, 3)
    N = geo.cells_per_axis
    v = np.zeros((PAD * N, geo.L))
    v[N:2 * N, 0] = 1.0
    F = HalfSpaceFunction(geo, v)
    alpha = 0.75
    h = float(geo.cell_side)
    table = truncated_cone(F, alpha) ** 2
    for i in range(N):
        x = (i + 0.5) * h
        ref = 0.0
        for c in range(N):
            dist = abs(x - (c + 0.5) * h)
            lo = max(0.5, dist / alpha)
            if lo < 1:
                ref += h * quad(lambda t: t**-2, lo, 1.0)[0]
        assert cone_functional(F, [i], alpha) ** 2 == pytest.approx(ref, rel=1e-12)
        assert table[i] == pytest.approx(ref, rel=1e-12)


@given(seeds, st.sampled_from([0.5, 1.0, 2.0]))
def test_band_tables_match_direct_sum(seed, alpha):
    geo = RootGeometry(1, 4)
    F = halfspace_uniform(geo, seed)
    A = truncated_cone(F, alpha, 1)
    for i in range(geo.cells_per_axis):
        assert A[i] == pytest.approx(cone_functional(F, [i], alpha, float(geo.side) / 2), rel=1e-10)


def test_band_tables_match_direct_sum_2d():
    geo = RootGeometry(2, 3)
    F = halfspace_uniform(geo, 8)
    A = truncated_cone(F, 1.0)
    for idx in [(0, 0), (3, 5), (7, 7)]:
        assert A[idx] == pytest.approx(cone_functional(F, idx, 1.0), rel=1e-10)


@given(seeds, st.sampled_from([1, 2]))
def test_field_identities(seed, n):
    geo = RootGeometry(n, 5 if n == 1 else 3)
    F = halfspace_uniform(geo, seed)
    tf = TentField(F)
    tf.build([("indicator", 0.5), ("phi2", 0.5), ("indicator", 1.0), ("indicator", 3.0)])
    L = geo.L
    # band additivity
    for k in range(L + 1):
        for k2 in range(k, L + 1):
            np.testing.assert_allclose(tf.truncated("phi2", 0.5, k),
                                       tf.band_range("phi2", 0.5, k, k2) + tf.truncated("phi2", 0.5, k2),
                                       rtol=1e-12, atol=1e-300)
    # exact sandwich and aperture monotonicity
    lo, mid, hi = tf.table("indicator", 0.5), tf.table("phi2", 0.5), tf.table("indicator", 1.0)
    assert (lo <= mid).all() and (mid <= hi).all()
    assert (hi <= tf.table("indicator", 3.0)).all()
    # truncation height monotone
    for k in range(L):
        assert (tf.truncated("indicator", 1.0, k + 1) <= tf.truncated("indicator", 1.0, k)).all()


@given(seeds)
def test_carleson_brute_force(seed):
    geo = RootGeometry(1, 4)
    F = halfspace_uniform(geo, seed)
    alpha, q = 1.0, 2.0
    C = carleson_functional(F, alpha, q)
    ell = float(geo.side)
    for i in range(geo.cells_per_axis):
        leaf = DyadicCube(geo.L, (i,))
        best = 0.0
        for k in range(geo.L + 1):
            Q = leaf.ancestor(k)
            ys = range(Q.index[0] << (geo.L - k), (Q.index[0] + 1) << (geo.L - k))
            avg = np.mean([cone_functional(F, [y], alpha, ell * 2.0**-k) ** q for y in ys])
            best = max(best, avg ** (1 / q))
        assert C[i] == pytest.approx(best, rel=1e-10)


@given(seeds)
def test_carleson_power_means(seed):
    geo = RootGeometry(2, 3)
    F = halfspace_uniform(geo, seed)
    tf = TentField(F)
    c1 = carleson_functional(F, 1.0, 1.0, tf)
    c2 = carleson_functional(F, 1.0, 2.0, tf)
    c4 = carleson_functional(F, 1.0, 4.0, tf)
    assert (c1 <= c2 * (1 + 1e-12)).all() and (c2 <= c4 * (1 + 1e-12)).all()


@given(seeds)
def test_tent_family_ell2_constant(seed):
    geo = RootGeometry(1, 5)
    res = check_ellr(TentFamily(halfspace_uniform(geo, seed), 1.0))
    assert res.exhaustive
    assert res.constant == pytest.approx(1.0, abs=1e-12)


@given(seeds, st.sampled_from([0.5, 1.0]))
def test_tent_sparse(seed, alpha):
    geo = RootGeometry(1, 6)
    rep = tent_sparse(halfspace_uniform(geo, seed), alpha=alpha)
    assert rep.passed, (rep.checks, rep.engine.checks)
    assert rep.beta == 4 * alpha + 1
    assert rep.engine.paper_bound == pytest.approx(2 * math.sqrt(3))


def test_tent_zero_input():
    geo = RootGeometry(1, 4)
    rep = tent_sparse(HalfSpaceFunction.zeros(geo))
    assert rep.passed and rep.theorem_constant == 0.0


def test_tent_good_lambda_tube():
    geo = RootGeometry(1, 6)
    F = halfspace_tube(geo, 3)
    A = truncated_cone(F, 0.25)
    C = carleson_functional(F, 0.25)
    # λ just below A/2 where A/C peaks, so {A > 2λ, C ≤ λ} is nonempty
    i = np.argmax(A / np.maximum(C, 1e-300))
    lams = [0.99 * float(A[i]) / 2, float(np.quantile(A[A > 0], 0.5)) / 2]
    curve = tent_good_lambda(F, lams, [0.25, 0.5, 1.0], alpha=0.25)
    assert curve.certificate_ok
    assert any(r.bad_measure > 0 for r in curve.rows)
    assert all(r.bad_measure <= r.superlevel_measure for r in curve.rows)


def test_tent_good_lambda_gamma_domain():
    geo = RootGeometry(1, 3)
    with pytest.raises(ValueError):
        tent_good_lambda(halfspace_uniform(geo, 1), [0.1], [1.5])


def test_halfspace_validation():
    geo = RootGeometry(1, 2)
    with pytest.raises(ValueError):
        HalfSpaceFunction(geo, np.zeros(5))
    F = halfspace_uniform(geo, 1)
    assert F.values.shape == (12, 2)
    assert F.band(1) == (0.5, 1.0)
    # padding is zero for generated data
    assert not F.values[:4].any() and not F.values[8:].any()
    with pytest.raises(ValueError):
        cone_functional(F, [0], 0.0)
