"""Dyadic cubes on a fixed root, contracting families and sparseness certificates.

Cubes are half-open, so the leaf cells of generation L partition the root
exactly. Measures are kept as :class:`fractions.Fraction` (leaf count times
the leaf measure), which makes every set-arithmetic check exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._blocks import block_reduce

MAX_LEAVES = 1 << 26


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Cube of generation ``gen`` with integer index in [0, 2**gen)^n."""

    gen: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.gen < 0:
            raise ValueError("generation must be nonnegative")
        if any(i < 0 or i >= (1 << self.gen) for i in self.index):
            raise ValueError(f"index {self.index} out of range for generation {self.gen}")

    @property
    def n(self) -> int:
        return len(self.index)

    def parent(self) -> "DyadicCube":
        if self.gen == 0:
            raise ValueError("the root has no parent")
        return DyadicCube(self.gen - 1, tuple(i >> 1 for i in self.index))

    def ancestor(self, gen: int) -> "DyadicCube":
        if gen > self.gen or gen < 0:
            raise ValueError("ancestor generation out of range")
        s = self.gen - gen
        return DyadicCube(gen, tuple(i >> s for i in self.index))

    def contains(self, other: "DyadicCube") -> bool:
        """True if ``other`` is this cube or one of its descendants."""
        if other.gen < self.gen:
            return False
        return other.ancestor(self.gen) == self

    @property
    def address(self) -> str:
        return f"{self.gen}:" + ",".join(str(i) for i in self.index)

    @classmethod
    def parse(cls, address: str) -> "DyadicCube":
        k, _, rest = address.partition(":")
        idx = tuple(int(s) for s in rest.split(",")) if rest else ()
        return cls(int(k), idx)

    def __str__(self) -> str:
        return self.address


@dataclass(frozen=True)
class RootGeometry:
    """Root cube Q0 = origin + [0, side)^n, subdivided down to generation L."""

    n: int
    L: int
    side: Fraction = Fraction(1)
    origin: tuple[Fraction, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if self.L < 1:
            raise ValueError("depth L must be at least 1")
        side = _as_fraction(self.side)
        if side <= 0:
            raise ValueError("side must be positive")
        object.__setattr__(self, "side", side)
        origin = self.origin if self.origin is not None else (0,) * self.n
        if len(origin) != self.n:
            raise ValueError("origin must have n components")
        object.__setattr__(self, "origin", tuple(_as_fraction(o) for o in origin))
        if (1 << (self.n * self.L)) > MAX_LEAVES:
            raise ValueError("too many leaf cells")

    # sizes -------------------------------------------------------------
    @property
    def cells_per_axis(self) -> int:
        return 1 << self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.n

    @property
    def num_leaves(self) -> int:
        return 1 << (self.n * self.L)

    @property
    def cell_side(self) -> Fraction:
        return self.side / self.cells_per_axis

    @property
    def cell_measure(self) -> Fraction:
        return self.cell_side**self.n

    @property
    def root(self) -> DyadicCube:
        return DyadicCube(0, (0,) * self.n)

    def side_of(self, cube: DyadicCube) -> Fraction:
        return self.side / (1 << cube.gen)

    def measure(self, cube: DyadicCube) -> Fraction:
        self._check(cube)
        return self.side_of(cube) ** self.n

    def leaves_in(self, cube: DyadicCube) -> int:
        return 1 << (self.n * (self.L - cube.gen))

    def _check(self, cube: DyadicCube) -> None:
        if cube.n != self.n or cube.gen > self.L:
            raise ValueError(f"cube {cube} does not belong to this geometry")

    # navigation --------------------------------------------------------
    def children(self, cube: DyadicCube) -> list[DyadicCube]:
        self._check(cube)
        if cube.gen >= self.L:
            raise ValueError("leaf has no children")
        base = tuple(2 * i for i in cube.index)
        return [
            DyadicCube(cube.gen + 1, tuple(b + o for b, o in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=self.n)
        ]

    def cubes(self, gen: int, within: DyadicCube | None = None) -> Iterator[DyadicCube]:
        """Generation-``gen`` cubes inside ``within`` (default: the root), row-major."""
        within = within or self.root
        s = gen - within.gen
        if s < 0:
            return iter(())
        ranges = [range(i << s, (i + 1) << s) for i in within.index]
        return (DyadicCube(gen, idx) for idx in itertools.product(*ranges))

    def subcubes(self, cube: DyadicCube) -> Iterator[DyadicCube]:
        """All of D(cube), generation by generation."""
        for g in range(cube.gen, self.L + 1):
            yield from self.cubes(g, cube)

    def locate(self, x: Sequence, gen: int) -> DyadicCube:
        if not 0 <= gen <= self.L:
            raise ValueError("generation out of range")
        x = [x] if np.isscalar(x) or isinstance(x, Fraction) else list(x)
        if len(x) != self.n:
            raise ValueError("point has wrong dimension")
        idx = []
        for xi, oi in zip(x, self.origin):
            u = (_as_fraction(xi) - oi) / self.side
            if not 0 <= u < 1:
                raise ValueError(f"point {x} outside the root cube")
            idx.append(int(u * (1 << gen)))
        return DyadicCube(gen, tuple(idx))

    def leaf_slice(self, cube: DyadicCube, within: DyadicCube | None = None) -> tuple[slice, ...]:
        """Slice of the leaf array of ``within`` (default root) covering ``cube``."""
        self._check(cube)
        within = within or self.root
        if not within.contains(cube):
            raise ValueError(f"{cube} is not inside {within}")
        w = 1 << (self.L - cube.gen)
        out = []
        for i, j in zip(cube.index, within.index):
            start = i * w - (j << (self.L - within.gen))
            out.append(slice(start, start + w))
        return tuple(out)

    def local_shape(self, cube: DyadicCube) -> tuple[int, ...]:
        return (1 << (self.L - cube.gen),) * self.n

    def leaf_cube(self, flat_or_multi, within: DyadicCube | None = None) -> DyadicCube:
        """Leaf cube for a (local) leaf index, flat row-major or multi-index."""
        within = within or self.root
        shape = self.local_shape(within)
        if np.isscalar(flat_or_multi):
            multi = np.unravel_index(int(flat_or_multi), shape)
        else:
            multi = tuple(flat_or_multi)
        base = [j << (self.L - within.gen) for j in within.index]
        return DyadicCube(self.L, tuple(int(b + m) for b, m in zip(base, multi)))

    def cell_centers(self) -> list[np.ndarray]:
        """Coordinates of leaf-cell centers, one open grid per axis (float)."""
        h = float(self.cell_side)
        return [float(o) + h * (np.arange(self.cells_per_axis) + 0.5) for o in self.origin]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "L": self.L,
            "side": str(self.side),
            "origin": [str(o) for o in self.origin],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RootGeometry":
        return cls(int(d["n"]), int(d["L"]), Fraction(str(d.get("side", "1"))),
                   tuple(Fraction(str(o)) for o in d["origin"]) if d.get("origin") else None)


@dataclass(frozen=True)
class Violation:
    """Why a family failed validation."""

    reason: str
    cube: DyadicCube | None = None
    ratio: Fraction | None = None

    def __bool__(self) -> bool:  # a violation is never "ok"
        return False

    def __str__(self) -> str:
        s = self.reason
        if self.cube is not None:
            s += f" at {self.cube.address}"
        if self.ratio is not None:
            s += f" (|E_P|/|P| = {self.ratio})"
        return s


@dataclass(frozen=True)
class ContractingFamily:
    """Generations F_0 = {root}, F_1, ... ending with an empty generation.

    A trailing empty generation is appended if missing. The root may be any
    cube of the geometry (local version).
    """

    geometry: RootGeometry
    generations: tuple[tuple[DyadicCube, ...], ...]

    def __post_init__(self):
        gens = tuple(tuple(sorted(g)) for g in self.generations)
        if not gens or len(gens[0]) != 1:
            raise ValueError("F_0 must consist of exactly one cube")
        if gens[-1]:
            gens = gens + ((),)
        object.__setattr__(self, "generations", gens)

    @property
    def root(self) -> DyadicCube:
        return self.generations[0][0]

    def cubes(self) -> Iterator[DyadicCube]:
        for g in self.generations:
            yield from g

    def __len__(self) -> int:
        return sum(len(g) for g in self.generations)

    def mask(self, cubes: Iterable[DyadicCube]) -> np.ndarray:
        """Boolean leaf mask (local to the root) of a union of cubes."""
        out = np.zeros(self.geometry.local_shape(self.root), dtype=bool)
        for c in cubes:
            out[self.geometry.leaf_slice(c, self.root)] = True
        return out

    def omega(self, k: int) -> np.ndarray:
        if k >= len(self.generations):
            return np.zeros(self.geometry.local_shape(self.root), dtype=bool)
        return self.mask(self.generations[k])

    def overlap(self) -> np.ndarray:
        """Integer array Σ_P χ_P over the root's leaves."""
        out = np.zeros(self.geometry.local_shape(self.root), dtype=np.int64)
        for c in self.cubes():
            out[self.geometry.leaf_slice(c, self.root)] += 1
        return out

    def to_json(self) -> list[list[str]]:
        return [[c.address for c in g] for g in self.generations]

    @classmethod
    def from_json(cls, geometry: RootGeometry, data: Sequence[Sequence[str]]) -> "ContractingFamily":
        return cls(geometry, tuple(tuple(DyadicCube.parse(a) for a in g) for g in data))


@dataclass(frozen=True)
class SparseFamily:
    """A contracting family with certified E_P = P minus Ω_{k+1}, |E_P| ≥ η|P|."""

    base: ContractingFamily
    eta: Fraction
    e_sets: dict = field(compare=False, repr=False)

    @property
    def geometry(self) -> RootGeometry:
        return self.base.geometry

    @property
    def root(self) -> DyadicCube:
        return self.base.root

    def cubes(self) -> Iterator[DyadicCube]:
        return self.base.cubes()

    def e_measure(self, cube: DyadicCube) -> Fraction:
        return int(self.e_sets[cube].sum()) * self.geometry.cell_measure


def validate_contracting(fam: ContractingFamily) -> bool | Violation:
    """Exact check of disjointness, nesting and strict descent; True or a Violation."""
    geo = fam.geometry
    gens = fam.generations
    for g in gens:
        for c in g:
            geo._check(c)
    root = fam.root
    prev_mask = None
    for k, g in enumerate(gens):
        for c in g:
            if not root.contains(c):
                return Violation("cube outside the root", c)
        m = np.zeros(geo.local_shape(root), dtype=np.int64)
        for c in g:
            m[geo.leaf_slice(c, root)] += 1
        if (m > 1).any():
            return Violation(f"generation {k} not pairwise disjoint")
        if prev_mask is not None:
            if (m.astype(bool) & ~prev_mask).any():
                bad = next(c for c in g if not prev_mask[geo.leaf_slice(c, root)].all())
                return Violation(f"generation {k} not nested in Ω_{k - 1}", bad)
            prev = set(gens[k - 1])
            for c in g:
                ok = c.gen > 0 and any(c.ancestor(a) in prev for a in range(c.gen))
                if not ok or c in prev:
                    return Violation(f"generation {k} cube is not a strict descendant", c)
        prev_mask = m.astype(bool)
    if gens[-1]:
        return Violation("family does not terminate with an empty generation")
    return True


def validate_eta_sparse(fam: ContractingFamily, eta) -> SparseFamily | Violation:
    """Compute every E_P exactly and certify |E_P| ≥ η|P|."""
    eta = _as_fraction(eta)
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    ok = validate_contracting(fam)
    if not ok:
        return ok
    geo = fam.geometry
    root = fam.root
    e_sets = {}
    for k, g in enumerate(fam.generations):
        nxt = fam.omega(k + 1)
        for P in g:
            sl = geo.leaf_slice(P, root)
            e = ~nxt[sl]
            count = int(e.sum())
            total = geo.leaves_in(P)
            if Fraction(count, total) < eta:
                return Violation("sparseness fails", P, Fraction(count, total))
            e.setflags(write=False)
            e_sets[P] = e
    return SparseFamily(fam, eta, e_sets)


@dataclass(frozen=True)
class OverlapDistribution:
    overlap: np.ndarray
    table: tuple[tuple[int, Fraction, Fraction], ...]  # (alpha, |{overlap > alpha}|, bound)
    ok: bool


def overlap_distribution(fam: SparseFamily) -> OverlapDistribution:
    """Exact distribution of Σ χ_P against (1-η)^{α-1}|Q| for α = 0..max."""
    geo = fam.geometry
    ov = fam.base.overlap()
    total = geo.measure(fam.root)
    cell = geo.cell_measure
    counts = np.bincount(ov.ravel())
    K = len(counts) - 1
    above = np.cumsum(counts[::-1])[::-1]  # above[a] = #{ov >= a}
    rows = []
    ok = True
    one_minus = 1 - fam.eta
    for alpha in range(K + 1):
        cnt = int(above[alpha + 1]) if alpha + 1 <= K else 0
        meas = cnt * cell
        bound = one_minus ** (alpha - 1) * total
        ok &= meas <= bound
        rows.append((alpha, meas, bound))
    return OverlapDistribution(ov, tuple(rows), bool(ok))


def count_blocks(mask: np.ndarray, b: int) -> np.ndarray:
    """Number of True leaves in each aligned block of side b."""
    return block_reduce(mask.astype(np.int64), b, "sum")
