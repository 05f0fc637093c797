"""Seeded input generators. Each draws from its own SplitMix64 stream in a fixed order."""
from __future__ import annotations

import math

import numpy as np

from .dyadic import RootGeometry
from .dyadic_sums import CubeCoefficients
from .gridfn import DiscreteMeasure, GridFunction, Weight
from .rng import SplitMix64
from .tent import PAD, HalfSpaceFunction, band_weight


def uniform_grid(geo: RootGeometry, seed: int, low: float = -1.0, high: float = 1.0) -> GridFunction:
    g = SplitMix64(seed)
    return GridFunction(geo, g.uniform(low, high, geo.num_leaves).reshape(geo.shape))


def spiky_grid(geo: RootGeometry, seed: int, atoms: int = 1) -> GridFunction:
    """`atoms` leaves (drawn with replacement) get heights in [1, 2); the rest is 0."""
    g = SplitMix64(seed)
    where = g.integers(geo.num_leaves, atoms)
    heights = g.uniform(1.0, 2.0, atoms)
    v = np.zeros(geo.num_leaves)
    np.add.at(v, where, heights)
    return GridFunction(geo, v.reshape(geo.shape))


def smooth_grid(geo: RootGeometry, seed: int, modes: int = 3) -> GridFunction:
    """Sum of `modes` products of cosines with integer frequencies in [1, modes]."""
    g = SplitMix64(seed)
    xs = [(c - float(o)) / float(geo.side) for c, o in zip(geo.cell_centers(), geo.origin)]
    out = np.zeros(geo.shape)
    for _ in range(modes):
        amp = float(g.uniform(-1.0, 1.0, 1)[0])
        term = np.ones(geo.shape)
        for ax in range(geo.n):
            freq = int(g.integers(modes, 1)[0]) + 1
            phase = float(g.uniform(0.0, 2 * math.pi, 1)[0])
            shape = [1] * geo.n
            shape[ax] = -1
            term = term * np.cos(2 * math.pi * freq * xs[ax] + phase).reshape(shape)
        out += amp * term
    return GridFunction(geo, out)


def atom_measure(geo: RootGeometry, seed: int, atoms: int = 1) -> DiscreteMeasure:
    """`atoms` unit-scale point masses (masses in [1/2, 3/2))."""
    g = SplitMix64(seed)
    where = g.integers(geo.num_leaves, atoms)
    masses = g.uniform(0.5, 1.5, atoms)
    v = np.zeros(geo.num_leaves)
    np.add.at(v, where, masses)
    return DiscreteMeasure(geo, v.reshape(geo.shape))


def uniform_measure(geo: RootGeometry) -> DiscreteMeasure:
    return DiscreteMeasure(geo, np.full(geo.shape, float(geo.cell_measure)))


def power_weight(geo: RootGeometry, seed: int, power: float = 0.5, floor: float = 1e-3,
                 center=None) -> Weight:
    """w(x) = max(|x - x0|^power, floor); x0 is a random leaf center unless given."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    centers = geo.cell_centers()
    if center is None:
        g = SplitMix64(seed)
        idx = np.unravel_index(int(g.integers(geo.num_leaves, 1)[0]), geo.shape)
        center = [float(c[i]) for c, i in zip(centers, idx)]
    grids = np.meshgrid(*centers, indexing="ij")
    dist = np.sqrt(sum((gg - c) ** 2 for gg, c in zip(grids, center)))
    return Weight(GridFunction(geo, np.maximum(dist**power, floor)))


def halfspace_uniform(geo: RootGeometry, seed: int) -> HalfSpaceFunction:
    """U(-1, 1) on the analysis root times all bands, zero in the padding."""
    g = SplitMix64(seed)
    N, L, n = geo.cells_per_axis, geo.L, geo.n
    out = np.zeros((PAD * N,) * n + (L,))
    vals = g.uniform(-1.0, 1.0, N**n * L).reshape((N,) * n + (L,))
    out[(slice(N, 2 * N),) * n] = vals
    return HalfSpaceFunction(geo, out)


def halfspace_tube(geo: RootGeometry, seed: int, jitter: float = 0.1) -> HalfSpaceFunction:
    """One random cell over every band, scaled so each band adds about 1 to A² there."""
    g = SplitMix64(seed)
    N, L, n = geo.cells_per_axis, geo.L, geo.n
    idx = np.unravel_index(int(g.integers(N**n, 1)[0]), (N,) * n)
    scale = g.uniform(1.0 - jitter, 1.0 + jitter, L)
    out = np.zeros((PAD * N,) * n + (L,))
    ell, cell = float(geo.side), float(geo.cell_measure)
    for j in range(1, L + 1):
        w = band_weight(n, ell * 2.0 ** (-j), ell * 2.0 ** (-j + 1))
        out[tuple(int(i) + N for i in idx) + (j - 1,)] = scale[j - 1] / math.sqrt(w * cell)
    return HalfSpaceFunction(geo, out)


def random_coefficients(geo: RootGeometry, seed: int, theta: float = 0.3, spike_prob: float = 0.05,
                        spike: float = 20.0) -> CubeCoefficients:
    """α_R = u_R 2^{-gθ} with u_R ∈ [0.1, 1), times `spike` with probability `spike_prob`."""
    g = SplitMix64(seed)
    levels = []
    for k in range(geo.L + 1):
        size = 1 << (k * geo.n)
        u = g.uniform(0.1, 1.0, size)
        s = np.where(g.random(size) < spike_prob, spike, 1.0)
        levels.append((u * s * 2.0 ** (-k * theta)).reshape((1 << k,) * geo.n))
    return CubeCoefficients(geo, tuple(levels))
