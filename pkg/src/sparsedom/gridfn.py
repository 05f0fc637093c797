"""Leaf-cell-constant functions: averages, rearrangements, oscillations, maximal functions.

Functions are arrays of shape (2**L,)*n in row-major leaf order. Integrals are
finite sums; an essential supremum over a cube is a max over its leaf cells.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._blocks import block_reduce, to_blocks, upsample
from .dyadic import DyadicCube, RootGeometry


@dataclass(frozen=True)
class GridFunction:
    geometry: RootGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.geometry.num_leaves:
            raise ValueError(f"expected {self.geometry.num_leaves} values, got {v.size}")
        v = v.reshape(self.geometry.shape)
        if not np.isfinite(v).all():
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def on(self, cube: DyadicCube) -> np.ndarray:
        return self.values[self.geometry.leaf_slice(cube)]

    def integral(self, cube: DyadicCube | None = None) -> float:
        cube = cube or self.geometry.root
        return float(self.on(cube).sum()) * float(self.geometry.cell_measure)

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(self.geometry, self.values * c)


@dataclass(frozen=True)
class DiscreteMeasure:
    geometry: RootGeometry
    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).reshape(self.geometry.shape)
        if not np.isfinite(m).all() or (m < 0).any():
            raise ValueError("masses must be finite and nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    def __call__(self, cube: DyadicCube) -> float:
        return float(self.masses[self.geometry.leaf_slice(cube)].sum())


@dataclass(frozen=True)
class Weight:
    """Strictly positive grid function."""

    function: GridFunction

    def __post_init__(self):
        if not (self.function.values > 0).all():
            raise ValueError("a weight must be strictly positive")

    @property
    def geometry(self) -> RootGeometry:
        return self.function.geometry

    def __call__(self, cube: DyadicCube) -> float:
        """w(Q) = ∫_Q w."""
        return self.function.integral(cube)


def p_average(f: GridFunction, cube: DyadicCube, p: float) -> float:
    """⟨f⟩_{p,Q}: the L^p average of |f| over the cube."""
    if p <= 0:
        raise ValueError("p must be positive")
    v = np.abs(f.on(cube))
    if p == 1:
        return float(v.mean())
    return float(np.mean(v**p) ** (1.0 / p))


# rearrangement ------------------------------------------------------------

def quantile_desc(abs_values: np.ndarray, t_cells) -> float:
    """f*(t) for t measured in leaf cells: sorted_desc(|f|)[floor(t)], or 0 past the end.

    ``t_cells`` may be a Fraction so that the floor is exact.
    """
    k = math.floor(t_cells)
    if k < 0:
        raise ValueError("t must be nonnegative")
    flat = np.asarray(abs_values).ravel()
    if k >= flat.size:
        return 0.0
    # k-th largest = (size-1-k)-th smallest
    return float(np.partition(flat, flat.size - 1 - k)[flat.size - 1 - k])


@dataclass(frozen=True)
class Rearrangement:
    """Right-continuous step function f*: value[i] on [t[i], t[i+1]), 0 after the support."""

    t: tuple[Fraction, ...]
    values: tuple[float, ...]

    def query(self, t) -> float:
        if t < 0:
            raise ValueError("t must be nonnegative")
        i = bisect.bisect_right(self.t, t) - 1
        return self.values[i]

    @property
    def support_measure(self) -> Fraction:
        return self.t[-1]


def rearrangement_of(values: np.ndarray, cell_measure: Fraction) -> Rearrangement:
    a = np.abs(np.asarray(values, dtype=float).ravel())
    uniq, counts = np.unique(a, return_counts=True)
    uniq, counts = uniq[::-1], counts[::-1]
    ts: list[Fraction] = []
    vs: list[float] = []
    acc = 0
    for v, c in zip(uniq, counts):
        if v == 0:
            break
        ts.append(acc * cell_measure)
        vs.append(float(v))
        acc += int(c)
    ts.append(acc * cell_measure)
    vs.append(0.0)
    return Rearrangement(tuple(ts), tuple(vs))


def rearrangement(f: GridFunction, cube: DyadicCube | None = None) -> Rearrangement:
    cube = cube or f.geometry.root
    r = rearrangement_of(f.on(cube), f.geometry.cell_measure)
    # |{|f| > f*(t)}| ≤ t at every breakpoint (the strict-inequality semantics)
    a = np.abs(f.on(cube))
    for t, v in zip(r.t, r.values):
        assert int((a > v).sum()) * f.geometry.cell_measure <= t
    return r


def distribution(values: np.ndarray, level: float, cell_measure: Fraction) -> Fraction:
    """|{|f| > level}| exactly."""
    return int((np.abs(values) > level).sum()) * cell_measure


# oscillations ---------------------------------------------------------------

def shortest_window(sorted_vals: np.ndarray, keep: int) -> tuple[float, float]:
    """Half-length and midpoint of the shortest window holding ``keep`` sorted values.

    Ties go to the leftmost window.
    """
    m = sorted_vals.size
    if keep <= 1:
        return 0.0, float(sorted_vals[0]) if keep == 1 else 0.0
    widths = sorted_vals[keep - 1:] - sorted_vals[: m - keep + 1]
    i = int(np.argmin(widths))
    lo, hi = float(sorted_vals[i]), float(sorted_vals[i + keep - 1])
    return (hi - lo) / 2.0, (hi + lo) / 2.0


def local_oscillation_of(values: np.ndarray, lam) -> tuple[float, float]:
    """ω_λ and an optimal center for the values of one cube (all cells equal measure)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    m = v.size
    k = math.floor(Fraction(lam) * m)
    return shortest_window(v, m - k)


def local_oscillation(f: GridFunction, cube: DyadicCube, lam) -> tuple[float, float]:
    """(ω_λ(f;Q), center). Accepts λ in (0,1); centers are optimal, so quasi-optimal."""
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    return local_oscillation_of(f.on(cube), lam)


def oscillation_of(values: np.ndarray, mode="sup") -> float:
    v = np.asarray(values, dtype=float).ravel()
    if mode == "sup":
        return float(v.max() - v.min())
    q = float(mode)
    if q <= 0:
        raise ValueError("q must be positive")
    if q == 2:
        return float(math.sqrt(2.0 * np.mean((v - v.mean()) ** 2)))
    if q == 1:
        s = np.sort(v)
        m = s.size
        # Σ_{i,j}|v_i - v_j| = 2 Σ_j s_j (2j - m + 1)
        total = 2.0 * float(np.dot(s, 2 * np.arange(m) - m + 1))
        return total / m**2
    d = np.abs(v[:, None] - v[None, :]) ** q
    return float(d.mean() ** (1.0 / q))


def oscillation(f: GridFunction, cube: DyadicCube, mode="sup") -> float:
    """sup mode: max - min; numeric mode q: the L^q double-average oscillation."""
    return oscillation_of(f.on(cube), mode)


def block_oscillation(a: np.ndarray, b: int, mode="sup") -> np.ndarray:
    """Oscillation of every aligned block of side b (result shape (N/b,)*n)."""
    if b == 1:
        return np.zeros_like(a, dtype=float)
    if mode == "sup":
        return block_reduce(a, b, "max") - block_reduce(a, b, "min")
    q = float(mode)
    rows = to_blocks(a, b)
    m = a.shape[0] // b
    shape = (m,) * a.ndim
    if q == 2:
        centred = rows - rows.mean(axis=1, keepdims=True)
        return np.sqrt(2.0 * np.mean(centred**2, axis=1)).reshape(shape)
    if q == 1:
        s = np.sort(rows, axis=1)
        k = s.shape[1]
        w = 2 * np.arange(k) - k + 1
        return (2.0 * (s @ w) / k**2).reshape(shape)
    out = np.empty(rows.shape[0])
    for i, row in enumerate(rows):
        out[i] = oscillation_of(row, q)
    return out.reshape(shape)


def dyadic_maximal_of(values: np.ndarray) -> np.ndarray:
    """max over dyadic P ∋ x inside the array's cube of ⟨|f|⟩_P."""
    a = np.abs(np.asarray(values, dtype=float))
    N = a.shape[0]
    n = a.ndim
    out = a.copy()
    b = 2
    while b <= N:
        means = block_reduce(a, b, "sum") / b**n
        np.maximum(out, upsample(means, b), out=out)
        b *= 2
    return out


def dyadic_maximal(f: GridFunction, cube: DyadicCube | None = None) -> np.ndarray:
    """M_Q f on the leaves of Q (local array)."""
    cube = cube or f.geometry.root
    return dyadic_maximal_of(f.on(cube))
