from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsedom.dyadic import (ContractingFamily, DyadicCube, RootGeometry, SparseFamily, Violation,
                              overlap_distribution, validate_contracting, validate_eta_sparse)


@st.composite
def geo_and_cube(draw, max_L=6):
    n = draw(st.integers(1, 2))
    L = draw(st.integers(1, max_L if n == 1 else 4))
    geo = RootGeometry(n, L)
    g = draw(st.integers(0, L))
    idx = tuple(draw(st.integers(0, (1 << g) - 1)) for _ in range(n))
    return geo, DyadicCube(g, idx)


def test_root_and_sizes():
    geo = RootGeometry(2, 3, Fraction(1, 2))
    assert geo.shape == (8, 8)
    assert geo.cell_side == Fraction(1, 16)
    assert geo.cell_measure == Fraction(1, 256)
    assert geo.measure(geo.root) == Fraction(1, 4)
    assert geo.leaves_in(DyadicCube(1, (0, 1))) == 16


def test_bad_geometry():
    with pytest.raises(ValueError):
        RootGeometry(0, 3)
    with pytest.raises(ValueError):
        RootGeometry(1, 0)
    with pytest.raises(ValueError):
        RootGeometry(1, 3, side=0)


def test_leaf_has_no_children():
    geo = RootGeometry(1, 2)
    with pytest.raises(ValueError, match="leaf"):
        geo.children(DyadicCube(2, (1,)))


def test_locate_is_half_open():
    geo = RootGeometry(1, 3)
    assert geo.locate([Fraction(1, 2)], 1) == DyadicCube(1, (1,))
    assert geo.locate([0], 3) == DyadicCube(3, (0,))
    with pytest.raises(ValueError):
        geo.locate([1], 1)


@given(geo_and_cube())
def test_children_partition_parent(gc):
    geo, c = gc
    if c.gen == geo.L:
        return
    kids = geo.children(c)
    assert len(kids) == 2**geo.n
    assert all(k.parent() == c for k in kids)
    assert sum(geo.measure(k) for k in kids) == geo.measure(c)


@given(geo_and_cube())
def test_address_round_trip(gc):
    _, c = gc
    assert DyadicCube.parse(c.address) == c


@given(geo_and_cube())
def test_ancestor_contains(gc):
    _, c = gc
    for g in range(c.gen + 1):
        a = c.ancestor(g)
        assert a.contains(c)
        assert a.gen == g


@given(geo_and_cube())
def test_leaf_slice_covers_leaves(gc):
    geo, c = gc
    mask = np.zeros(geo.shape, dtype=bool)
    mask[geo.leaf_slice(c)] = True
    assert mask.sum() == geo.leaves_in(c)
    # every leaf of the slice has c as ancestor
    for flat in np.flatnonzero(mask.ravel())[:8]:
        assert geo.leaf_cube(int(flat)).ancestor(c.gen) == c


def test_geometry_dict_round_trip():
    geo = RootGeometry(2, 3, Fraction(3, 2), (Fraction(-1), Fraction(1, 3)))
    assert RootGeometry.from_dict(geo.to_dict()) == geo


def _fam(geo, *gens):
    return ContractingFamily(geo, tuple(tuple(DyadicCube.parse(a) for a in g) for g in gens))


def test_contracting_ok():
    geo = RootGeometry(1, 3)
    fam = _fam(geo, ["0:0"], ["2:1", "2:3"], ["3:7"], [])
    assert validate_contracting(fam) is True


def test_contracting_not_nested():
    geo = RootGeometry(1, 3)
    fam = _fam(geo, ["0:0"], ["2:1"], ["3:7"], [])
    v = validate_contracting(fam)
    assert isinstance(v, Violation) and not v
    assert "nested" in v.reason


def test_contracting_overlap_in_generation():
    geo = RootGeometry(1, 3)
    fam = _fam(geo, ["0:0"], ["1:0", "2:1"], [])
    assert not validate_contracting(fam)


def test_eta_sparse_exact_boundary():
    geo = RootGeometry(1, 2)
    # root keeps exactly half its measure
    fam = _fam(geo, ["0:0"], ["1:1"], [])
    assert isinstance(validate_eta_sparse(fam, Fraction(1, 2)), SparseFamily)
    v = validate_eta_sparse(fam, Fraction(3, 4))
    assert not v and v.cube == DyadicCube(0, (0,)) and v.ratio == Fraction(1, 2)


def test_eta_out_of_range():
    geo = RootGeometry(1, 2)
    with pytest.raises(ValueError):
        validate_eta_sparse(_fam(geo, ["0:0"], []), 1)


def test_family_json_round_trip():
    geo = RootGeometry(2, 3)
    fam = _fam(geo, ["0:0,0"], ["1:0,1", "2:3,3"], [])
    assert ContractingFamily.from_json(geo, fam.to_json()) == fam


def test_overlap_distribution_table():
    geo = RootGeometry(1, 3)
    fam = _fam(geo, ["0:0"], ["1:1"], ["2:3"], [])
    sf = validate_eta_sparse(fam, Fraction(1, 2))
    dist = overlap_distribution(sf)
    assert dist.ok
    # overlap: 1 on [0,1/2), 2 on [1/2,3/4), 3 on [3/4,1)
    assert list(dist.overlap) == [1, 1, 1, 1, 2, 2, 3, 3]
    meas = {a: m for a, m, _ in dist.table}
    assert meas[0] == 1 and meas[1] == Fraction(1, 2) and meas[2] == Fraction(1, 4) and meas[3] == 0


@given(st.integers(0, 2**32), st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]))
def test_random_nested_families_validate_consistently(seed, eta):
    """Random nested families: validate_eta_sparse agrees with a direct recount."""
    rng = np.random.default_rng(seed)
    geo = RootGeometry(1, 5)
    gens = [(geo.root,)]
    while gens[-1]:
        nxt = []
        for c in gens[-1]:
            if c.gen >= geo.L:
                continue
            for k in geo.children(c):
                if rng.uniform() < 0.3:
                    nxt.append(k)
        gens.append(tuple(sorted(nxt)))
    fam = ContractingFamily(geo, tuple(gens))
    assert validate_contracting(fam) is True
    res = validate_eta_sparse(fam, eta)
    expect = True
    for k, g in enumerate(fam.generations):
        nxt = fam.omega(k + 1)
        for P in g:
            kept = (~nxt[geo.leaf_slice(P)]).sum()
            expect &= Fraction(int(kept), geo.leaves_in(P)) >= eta
    assert bool(res) == expect
