"""Cube-indexed families {f_Q, f_{P,Q}} and the checks run against them.

Every family is evaluated through *tiles*: ``f_tiles(k)`` is one array over
all leaves of the geometry whose restriction to each generation-k cube R is
f_R, and ``diff_tiles(k_out, k_in)`` restricts on each generation-k_in cube P
to f_{P,Q} with Q the generation-k_out ancestor of P. Cubes of one generation
tile the root, so these arrays are well defined and everything downstream
(sharp maximal functions, chain checks, the stopping time) vectorises.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from ._blocks import block_reduce, to_blocks, upsample
from .dyadic import DyadicCube, RootGeometry
from .gridfn import GridFunction, block_oscillation

# (k_outer, k_inner) pairs are relative to the geometry root.


class CubeFamily:
    """Base class. Subclasses implement ``_f_tiles``; differences default to canonical."""

    def __init__(self, geometry: RootGeometry, r: float = 1.0, C_r: float = 1.0):
        if r <= 0:
            raise ValueError("r must be positive")
        if C_r < 1:
            raise ValueError("declared C_r must be at least 1")
        self.geometry = geometry
        self.r = float(r)
        self.C_r = float(C_r)
        self._cache: dict = {}
        self._lock = threading.RLock()

    # memoisation shared by subclasses; values are computed at most once per key
    def _memo(self, key, fn):
        try:
            return self._cache[key]
        except KeyError:
            pass
        with self._lock:
            if key not in self._cache:
                val = fn()
                if isinstance(val, np.ndarray):
                    val.setflags(write=False)
                self._cache[key] = val
            return self._cache[key]

    def _f_tiles(self, k: int) -> np.ndarray:
        raise NotImplementedError

    def _diff_tiles(self, k_outer: int, k_inner: int) -> np.ndarray:
        return self.f_tiles(k_outer) - self.f_tiles(k_inner)

    def f_tiles(self, k: int) -> np.ndarray:
        out = self._memo(("f", k), lambda: np.asarray(self._f_tiles(k), dtype=float))
        return out

    def diff_tiles(self, k_outer: int, k_inner: int) -> np.ndarray:
        if k_outer > k_inner:
            raise ValueError("outer generation must not exceed inner generation")
        if k_outer == k_inner:
            return self._memo(("zero",), lambda: np.zeros(self.geometry.shape))
        return self._memo(("d", k_outer, k_inner),
                          lambda: np.asarray(self._diff_tiles(k_outer, k_inner), dtype=float))

    def eval_f(self, cube: DyadicCube) -> np.ndarray:
        return self.f_tiles(cube.gen)[self.geometry.leaf_slice(cube)]

    def eval_diff(self, P: DyadicCube, Q: DyadicCube) -> np.ndarray:
        if not Q.contains(P):
            raise ValueError(f"{P} is not in D({Q})")
        return self.diff_tiles(Q.gen, P.gen)[self.geometry.leaf_slice(P)]

    def sharp_tiles(self, k: int, mode="sup") -> np.ndarray:
        """m^#_Q on every generation-k cube Q at once."""
        return self._memo(("sharp", k, mode), lambda: _sharp_tiles(self, k, mode))


def _sharp_tiles(fam: CubeFamily, k: int, mode) -> np.ndarray:
    geo = fam.geometry
    out = np.zeros(geo.shape)
    for kp in range(k + 1, geo.L + 1):
        b = 1 << (geo.L - kp)
        d = fam.diff_tiles(k, kp)
        if b == 1:
            continue  # a single cell has zero oscillation
        osc = block_oscillation(d, b, mode)
        np.maximum(out, upsample(osc, b), out=out)
    return out


def sharp_maximal(fam: CubeFamily, Q: DyadicCube, mode="sup") -> np.ndarray:
    """m^#_Q f (mode "sup") or m^#_{Q,q} f (numeric mode q) on the leaves of Q."""
    return fam.sharp_tiles(Q.gen, mode)[fam.geometry.leaf_slice(Q)]


# concrete families ----------------------------------------------------------

class TiledFamily(CubeFamily):
    """Canonical family given directly by a tile function k -> array."""

    def __init__(self, geometry, tiles: Callable[[int], np.ndarray], r=1.0, C_r=1.0):
        super().__init__(geometry, r, C_r)
        self._tiles = tiles

    def _f_tiles(self, k):
        return self._tiles(k)


class MapFamily(CubeFamily):
    """Family from per-cube callables.

    ``f_map(Q)`` returns f_Q on the leaves of Q. ``diff_map(P, Q)`` returns
    f_{P,Q} on the leaves of P; when omitted the canonical f_Q - f_P is used.
    """

    def __init__(self, geometry, f_map, diff_map=None, r=1.0, C_r=1.0):
        super().__init__(geometry, r, C_r)
        self.f_map = f_map
        self.diff_map = diff_map

    def _f_tiles(self, k):
        out = np.empty(self.geometry.shape)
        for Q in self.geometry.cubes(k):
            out[self.geometry.leaf_slice(Q)] = self.f_map(Q)
        return out

    def _diff_tiles(self, k_outer, k_inner):
        if self.diff_map is None:
            return super()._diff_tiles(k_outer, k_inner)
        out = np.empty(self.geometry.shape)
        for P in self.geometry.cubes(k_inner):
            out[self.geometry.leaf_slice(P)] = self.diff_map(P, P.ancestor(k_outer))
        return out


def canonical_family(geometry: RootGeometry, f_map, r: float = 1.0) -> MapFamily:
    """f_{P,Q} := f_Q - f_P on P. The ℓ^r condition holds with C_r = 1 for r ≤ 1."""
    return MapFamily(geometry, f_map, None, r=r, C_r=1.0)


def center_tiles(values: np.ndarray, k: int, L: int, lam=0.25) -> tuple[np.ndarray, np.ndarray]:
    """Optimal λ-centers and ω_λ of every generation-k cube, broadcast to leaves."""
    n = values.ndim
    b = 1 << (L - k)
    rows = np.sort(to_blocks(values, b), axis=1)
    m = rows.shape[1]
    keep = m - math.floor(Fraction(lam) * m)
    if keep <= 1:
        centers = rows[:, 0].copy()
        omegas = np.zeros(rows.shape[0])
    else:
        widths = rows[:, keep - 1:] - rows[:, : m - keep + 1]
        i = np.argmin(widths, axis=1)
        ar = np.arange(rows.shape[0])
        lo, hi = rows[ar, i], rows[ar, i + keep - 1]
        centers, omegas = (lo + hi) / 2.0, (hi - lo) / 2.0
    side = values.shape[0] // b
    c = upsample(centers.reshape((side,) * n), b)
    w = upsample(omegas.reshape((side,) * n), b)
    return c, w


class LocalOscillationFamily(CubeFamily):
    """f_Q = |f - c(Q)|, f_{P,Q} = |c(P) - c(Q)| with c(Q) an optimal 1/4-center."""

    def __init__(self, f: GridFunction, lam=0.25):
        super().__init__(f.geometry, 1.0, 1.0)
        self.f = f
        self.lam = lam

    def centers(self, k):
        return self._memo(("c", k), lambda: center_tiles(self.f.values, k, self.geometry.L, self.lam)[0])

    def _f_tiles(self, k):
        return np.abs(self.f.values - self.centers(k))

    def _diff_tiles(self, k_outer, k_inner):
        return np.abs(self.centers(k_inner) - self.centers(k_outer))


class LocalMaximalFamily(CubeFamily):
    """Canonical family f_Q = M_Q g, the dyadic maximal function localised to Q."""

    def __init__(self, g: GridFunction):
        super().__init__(g.geometry, 1.0, 1.0)
        self.g = g

    def _f_tiles(self, k):
        return local_maximal_tiles(np.abs(self.g.values), k, self.geometry.L)


def local_maximal_tiles(a: np.ndarray, k: int, L: int) -> np.ndarray:
    """On each generation-k cube R, the dyadic maximal function M_R of ``a``."""
    n = a.ndim
    out = a.astype(float).copy()
    for g in range(L - 1, k - 1, -1):
        b = 1 << (L - g)
        np.maximum(out, upsample(block_reduce(a, b, "sum") / b**n, b), out=out)
    return out


# operator localisation -----------------------------------------------------

def alpha_mask(geometry: RootGeometry, Q: DyadicCube, alpha: float) -> np.ndarray:
    """Leaves whose centers lie in αQ (same center, side α ℓ_Q), clipped to the root."""
    w = 1 << (geometry.L - Q.gen)
    masks = []
    for i in Q.index:
        j = np.arange(geometry.cells_per_axis) + 0.5
        rel = j - (i + 0.5) * w
        masks.append((rel >= -alpha * w / 2) & (rel < alpha * w / 2))
    out = masks[0]
    for m in masks[1:]:
        out = out[..., None] & m
    return out


def dyadic_average_operator(geometry: RootGeometry, level: int):
    """Conditional expectation onto generation-``level`` cubes (linear)."""
    b = 1 << (geometry.L - level)

    def T(v: np.ndarray) -> np.ndarray:
        return upsample(block_reduce(v, b, "sum") / b**geometry.n, b)

    return T


def box_smoothing_operator(geometry: RootGeometry, radius: int):
    """Average over the (2ρ+1)^n box of cells around each cell, zero extension (linear)."""
    from scipy.ndimage import uniform_filter

    size = 2 * radius + 1

    def T(v: np.ndarray) -> np.ndarray:
        return uniform_filter(np.asarray(v, dtype=float), size=size, mode="constant", cval=0.0)

    return T


class OperatorFamily(CubeFamily):
    """f_Q = |T(f χ_{αQ})| on Q and f_{P,Q} = |T(f χ_{αQ}) - T(f χ_{αP})| on P."""

    def __init__(self, T, alpha: float, f: GridFunction, r: float = 1.0):
        if alpha < 1:
            raise ValueError("alpha must be at least 1")
        super().__init__(f.geometry, r, 1.0)
        self.T = T
        self.alpha = float(alpha)
        self.f = f

    def values(self, k):
        """Signed T(f χ_{αQ}) tiled over generation-k cubes Q."""
        def build():
            geo = self.geometry
            out = np.empty(geo.shape)
            for Q in geo.cubes(k):
                v = self.T(self.f.values * alpha_mask(geo, Q, self.alpha))
                sl = geo.leaf_slice(Q)
                out[sl] = np.asarray(v)[sl]
            return out
        return self._memo(("v", k), build)

    def _f_tiles(self, k):
        return np.abs(self.values(k))

    def _diff_tiles(self, k_outer, k_inner):
        return np.abs(self.values(k_outer) - self.values(k_inner))

    def operator_sharp(self, Q: DyadicCube) -> np.ndarray:
        """The operator sharp function: sup over P of the oscillation of T_Q f - T_P f on P."""
        geo = self.geometry
        out = np.zeros(geo.shape)
        for kp in range(Q.gen + 1, geo.L):
            b = 1 << (geo.L - kp)
            d = self.values(Q.gen) - self.values(kp)
            np.maximum(out, upsample(block_oscillation(d, b, "sup"), b), out=out)
        return out[geo.leaf_slice(Q)]


def operator_localization_family(T, alpha: float, f: GridFunction, r: float = 1.0) -> OperatorFamily:
    return OperatorFamily(T, alpha, f, r)


# checks ---------------------------------------------------------------------

@dataclass(frozen=True)
class EllrResult:
    constant: float
    exhaustive: bool
    chains_tested: int
    witness_leaf: DyadicCube | None
    witness_chain: tuple[int, ...]  # generations P_1 ⊋ ... ⊋ P_m

    @property
    def label(self) -> str:
        return "exact" if self.exhaustive else "certified lower bound"


def _chain_ratio(F: np.ndarray, D: dict, chain: tuple[int, ...], r: float) -> np.ndarray:
    num = F[chain[0]]
    den = np.zeros_like(num)
    for a, b in zip(chain, chain[1:]):
        den += D[a, b] ** r
    den += F[chain[-1]] ** r
    den = den ** (1.0 / r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return ratio


def check_ellr(fam: CubeFamily, Q: DyadicCube | None = None, r: float | None = None,
               budget: str = "exhaustive", samples: int = 2000, seed: int = 0) -> EllrResult:
    """Measured ℓ^r constant over chains of D(Q).

    ``budget="exhaustive"`` enumerates every chain (n = 1 and depth ≤ 6 only)
    and is exact; ``"sampled"`` draws seeded random chains and yields a lower
    bound.
    """
    from .rng import SplitMix64

    geo = fam.geometry
    Q = Q or geo.root
    r = fam.r if r is None else float(r)
    gens = list(range(Q.gen, geo.L + 1))
    sl = geo.leaf_slice(Q)
    F = {g: np.abs(fam.f_tiles(g)[sl]).ravel() for g in gens}
    D = {(a, b): np.abs(fam.diff_tiles(a, b)[sl]).ravel() for a, b in itertools.combinations(gens, 2)}
    if budget == "exhaustive":
        if geo.n != 1 or len(gens) - 1 > 6:
            raise ValueError("exhaustive chain enumeration is limited to n = 1 and depth ≤ 6")
        chains = [c for m in range(1, len(gens) + 1) for c in itertools.combinations(gens, m)]
    elif budget == "sampled":
        rng = SplitMix64(seed)
        chains = []
        for _ in range(samples):
            bits = rng.integers(2, len(gens))
            c = tuple(g for g, b in zip(gens, bits) if b)
            chains.append(c or (gens[0],))
    else:
        raise ValueError(f"unknown budget {budget!r}")
    best, best_chain, best_leaf = 0.0, (), None
    for c in chains:
        ratio = _chain_ratio(F, D, c, r)
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, best_chain, best_leaf = float(ratio[i]), c, i
    leaf = geo.leaf_cube(best_leaf, Q) if best_leaf is not None else None
    return EllrResult(best, budget == "exhaustive", len(chains), leaf, best_chain)


def check_majorization(fam: CubeFamily, Q: DyadicCube | None = None, rtol: float = 1e-12):
    """|f_{P,Q'}| ≤ |f_P| + |f_Q'| at every leaf for all Q' ∈ D(Q), P ∈ D(Q'). Returns (ok, worst ratio)."""
    geo = fam.geometry
    Q = Q or geo.root
    sl = geo.leaf_slice(Q)
    worst = 0.0
    for ko in range(Q.gen, geo.L + 1):
        fo = np.abs(fam.f_tiles(ko)[sl])
        for ki in range(ko + 1, geo.L + 1):
            fi = np.abs(fam.f_tiles(ki)[sl])
            d = np.abs(fam.diff_tiles(ko, ki)[sl])
            s = fo + fi
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(s > 0, d / np.where(s > 0, s, 1.0), np.where(d > 0, np.inf, 0.0))
            worst = max(worst, float(ratio.max()))
    return worst <= 1 + rtol, worst
