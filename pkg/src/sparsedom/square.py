"""Scalar vertical square functions with Hörmander-type kernels.

f lives on the analysis root and is zero outside. Scale band j covers
t ∈ [ℓ 2^{-j}, ℓ 2^{-j+1}); φ_t * f is evaluated once per band at the
geometric midpoint t_j = ℓ 2^{-j} √2 and weighted by ∫_band dt/t = ln 2.
Bands finer than one leaf are dropped: a piecewise constant f convolved with a
cancellative φ_t, t << h, is zero away from cell faces, and a center sample
would not see that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.signal import convolve

from .dyadic import DyadicCube
from .engine import DominationReport, build_sparse_pointwise, coefficient_sum, safe_ratio
from .family import CubeFamily
from .gridfn import GridFunction
from .rng import SplitMix64

LN2 = math.log(2.0)


@dataclass(frozen=True)
class HormanderKernel:
    phi: Callable[[np.ndarray], np.ndarray]  # takes |x| (radial) or points (..., n)
    n: int
    epsilon: float
    delta: float
    radius: float  # φ is treated as zero beyond this (in units of t)
    radial: bool = True
    norm: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta <= 0:
            raise ValueError("epsilon and delta must be positive")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """φ at points of shape (..., n)."""
        pts = np.asarray(pts, dtype=float)
        if self.radial:
            return self.phi(np.sqrt((pts**2).sum(axis=-1)))
        return self.phi(pts)

    def tail_bound(self) -> float:
        """∫_{|x| > radius} (1+|x|)^{-n-ε} dx: what the size bound allows outside the truncation."""
        s = 2.0 if self.n == 1 else 2.0 * math.pi
        return s * (1.0 + self.radius) ** (-self.epsilon) / self.epsilon

    def dilated(self, t: float, offsets: np.ndarray, h: float) -> np.ndarray:
        """h^n φ_t(d h) for integer offsets d (..., n), zero beyond radius·t."""
        pts = offsets * h / t
        vals = self(pts) * (h / t) ** self.n
        far = np.sqrt((pts**2).sum(axis=-1)) > self.radius
        return np.where(far, 0.0, vals)


def _gauss(n: int, s: float, r: np.ndarray) -> np.ndarray:
    return np.exp(-(r**2) / (2 * s * s)) / (2 * math.pi * s * s) ** (n / 2)


def gaussian_difference(n: int, epsilon: float = 0.5, delta: float = 1.0, s1: float = 0.5,
                        s2: float = 1.0, margin: float = 0.5) -> HormanderKernel:
    """A (G_{s1} - G_{s2}), with A fixed so that both decay bounds hold with room to spare."""
    r = np.linspace(0.0, 40.0, 8001)
    base = _gauss(n, s1, r) - _gauss(n, s2, r)
    size = float((np.abs(base) * (1 + r) ** (n + epsilon)).max())
    # Hölder constant from pairs on a radial grid; δ ≤ 1 so pairs closer than 1 dominate
    rr = np.linspace(0.0, 20.0, 801)
    bb = _gauss(n, s1, rr) - _gauss(n, s2, rr)
    d = np.abs(rr[:, None] - rr[None, :])
    num = np.abs(bb[:, None] - bb[None, :])
    den = np.where(d > 0, d**delta, np.inf) / (1 + np.minimum(rr[:, None], rr[None, :])) ** (n + epsilon + delta)
    hold = float((num / den).max())
    A = margin / max(size, hold)
    radius = 12.0 * s2

    def phi(rad, A=A):
        return A * (_gauss(n, s1, rad) - _gauss(n, s2, rad))

    return HormanderKernel(phi, n, epsilon, delta, radius, True, A, "gaussian-difference")


def zero_kernel(n: int, epsilon: float = 0.5, delta: float = 1.0) -> HormanderKernel:
    return HormanderKernel(lambda r: np.zeros_like(r), n, epsilon, delta, 1.0, True, 0.0, "zero")


def decay_kernel(n: int, epsilon: float = 0.5) -> HormanderKernel:
    """(1+|x|)^{-n-ε}: meets the size bound but has no cancellation."""
    return HormanderKernel(lambda r: (1 + r) ** (-n - epsilon), n, epsilon, 1.0, 1e6, True, 1.0, "decay")


@dataclass
class KernelValidation:
    ok: bool
    integral: float
    violations: list
    margins: dict

    def __bool__(self) -> bool:
        return self.ok


def kernel_validate(k: HormanderKernel, spacing: float = 0.02, extent: float | None = None,
                    pairs: int = 20000, seed: int = 0, tol: float = 1e-8) -> KernelValidation:
    """Cancellation on a fine grid, the size bound at every node, the Hölder bound on sampled pairs."""
    n = k.n
    R = min(k.radius, 60.0) if extent is None else extent
    ax = np.arange(-R, R + spacing / 2, spacing)
    pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
    vals = k(pts)
    integral = float(vals.sum() * spacing**n)
    rad = np.sqrt((pts**2).sum(axis=-1))
    size_ratio = np.abs(vals) * (1 + rad) ** (n + k.epsilon)
    violations = []
    if abs(integral) > tol:
        violations.append(("cancellation", integral))
    worst_size = float(size_ratio.max())
    if worst_size > 1.0:
        violations.append(("size", worst_size))
    g = SplitMix64(seed)
    x = (g.uniform(-R, R, pairs * n)).reshape(pairs, n)
    # half the pairs are close, where the Hölder bound bites
    step = g.uniform(-1.0, 1.0, pairs * n).reshape(pairs, n)
    scale = np.where(np.arange(pairs) % 2 == 0, 1e-3, 2.0)[:, None]
    y = x + step * scale
    dist = np.sqrt(((x - y) ** 2).sum(axis=-1))
    mn = np.minimum(np.sqrt((x**2).sum(-1)), np.sqrt((y**2).sum(-1)))
    bound = dist**k.delta / (1 + mn) ** (n + k.epsilon + k.delta)
    diff = np.abs(k(x) - k(y))
    hold_ratio = safe_ratio(diff, bound)
    worst_hold = float(hold_ratio.max())
    if worst_hold > 1.0:
        violations.append(("holder", worst_hold))
    margins = {"size": 1.0 - worst_size, "holder": 1.0 - worst_hold, "integral": integral}
    return KernelValidation(not violations, integral, violations, margins)


def band_midpoint(ell: float, j: int) -> float:
    return ell * 2.0 ** (-j) * math.sqrt(2.0)


def vertical_square(f: GridFunction, x, q: float, k: HormanderKernel, h: float | None = None,
                    coarse_bands: int | None = None) -> float:
    """G^h_{q,φ}(f)(x) at a leaf x by direct summation over the support of f.

    With h=None the bands run up to t = ℓ 2^{coarse_bands} (default L).
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    geo = f.geometry
    n, L, N = geo.n, geo.L, geo.cells_per_axis
    ell, hc = float(geo.side), float(geo.cell_side)
    xi = np.array(x.index if isinstance(x, DyadicCube) else np.atleast_1d(x))
    grids = np.stack(np.meshgrid(*([np.arange(N)] * n), indexing="ij"), axis=-1)
    offs = xi - grids
    fv = f.values
    j0 = 1 - (L if coarse_bands is None else coarse_bands) if h is None else 1
    total = 0.0
    for j in range(j0, L + 1):
        t_lo, t_hi = ell * 2.0 ** (-j), ell * 2.0 ** (-j + 1)
        if h is not None:
            if h <= t_lo:
                continue
            t_hi = min(t_hi, h)
        t = math.sqrt(t_lo * t_hi)
        c = float((k.dilated(t, offs, hc) * fv).sum())
        total += abs(c) ** q * math.log(t_hi / t_lo)
    return total ** (1.0 / q)


def band_convolutions(f: GridFunction, k: HormanderKernel) -> np.ndarray:
    """φ_{t_j} * f on every leaf for j = 1..L, stacked on the last axis."""
    geo = f.geometry
    n, L, N = geo.n, geo.L, geo.cells_per_axis
    ell, hc = float(geo.side), float(geo.cell_side)
    out = np.zeros(geo.shape + (L,))
    fv = f.values
    if not fv.any():
        return out
    for j in range(1, L + 1):
        t = band_midpoint(ell, j)
        R = int(min(math.ceil(k.radius * t / hc), N - 1))
        ax = np.arange(-R, R + 1)
        offs = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
        K = k.dilated(t, offs, hc)
        out[..., j - 1] = convolve(fv, K, mode="same", method="direct")
    return out


class SquareFamily(CubeFamily):
    """f_Q = G^{ℓ_Q}_{q,φ}(f), f_{P,Q} = the same over the bands in [ℓ_P, ℓ_Q)."""

    def __init__(self, f: GridFunction, q: float, k: HormanderKernel):
        if q < 1:
            raise ValueError("q must be at least 1")
        super().__init__(f.geometry, r=float(q), C_r=1.0)
        self.f = f
        self.q = float(q)
        self.kernel = k
        self.conv = band_convolutions(f, k)
        self._pow = np.abs(self.conv) ** self.q * LN2

    def _f_tiles(self, k):
        return self._pow[..., k:].sum(axis=-1) ** (1.0 / self.q)

    def _diff_tiles(self, k_outer, k_inner):
        return self._pow[..., k_outer:k_inner].sum(axis=-1) ** (1.0 / self.q)


def _axis_weights(N: int, h: float, a: float, b: float) -> np.ndarray:
    """Fraction of each cell [i h, (i+1) h] inside [a, b]."""
    lo = np.arange(N) * h
    return np.clip(np.minimum(lo + h, b) - np.maximum(lo, a), 0.0, None) / h


def dilate_average(f: GridFunction, P: DyadicCube, m: int) -> float:
    """⟨|f|⟩ over the cube with P's center and 2^m times its side (f = 0 off the root)."""
    geo = f.geometry
    s = float(geo.side_of(P))
    hc = float(geo.cell_side)
    N = geo.cells_per_axis
    a = np.abs(f.values)
    for ax, i in enumerate(P.index):
        c = (i + 0.5) * s
        w = _axis_weights(N, hc, c - 2.0 ** (m - 1) * s, c + 2.0 ** (m - 1) * s)
        a = np.tensordot(a, w, axes=([0], [0]))
    integral = float(a) * hc**geo.n
    return integral / (2.0**m * s) ** geo.n


def tail_coefficient(f: GridFunction, P: DyadicCube, q: float, epsilon: float) -> tuple[float, int]:
    """Σ_{m≥1} 2^{-mε} ⟨|f|⟩_{1,2^m P}^q, summed explicitly until 2^m P covers the root,
    then in closed form. Returns (value, number of explicit terms)."""
    geo = f.geometry
    n = geo.n
    gen = P.gen
    # 2^m P contains the root once 2^{m-1} ℓ_P ≥ ℓ, i.e. m ≥ gen + 1
    m0 = gen + 1
    l1 = float(np.abs(f.values).sum()) * float(geo.cell_measure)
    terms = [2.0 ** (-m * epsilon) * dilate_average(f, P, m) ** q for m in range(1, m0 + 1)]
    base = l1 / float(geo.measure(P))
    rho = 2.0 ** (-(epsilon + n * q))
    tail = base**q * rho ** (m0 + 1) / (1 - rho)
    return math.fsum(terms) + tail, m0


@dataclass
class SquareReport:
    engine: DominationReport
    coefficients: dict
    theorem_constant: float
    weak_l1: float
    quadrature: dict
    checks: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.engine.passed

    def summary(self) -> dict:
        return {
            "engine": self.engine.summary(),
            "theorem_constant": self.theorem_constant,
            "weak_l1": self.weak_l1,
            "quadrature": dict(sorted(self.quadrature.items())),
            "checks": dict(sorted(self.checks.items())),
            "extra": {k: self.extra[k] for k in sorted(self.extra)},
        }


def weak_l1_diagnostic(G: np.ndarray, l1: float, cell: float) -> float:
    """sup_α α |{G > α}| / ‖f‖₁ over the attained values of G."""
    if l1 <= 0:
        return 0.0
    v = np.sort(G.ravel())[::-1]
    counts = np.arange(1, v.size + 1)
    # just below v[i] the level set has at least i+1 cells
    return float((v * counts).max() * cell / l1)


def square_sparse(f: GridFunction, Q: DyadicCube | None = None, q: float = 2.0,
                  k: HormanderKernel | None = None, eta=Fraction(1, 2),
                  family: SquareFamily | None = None) -> SquareReport:
    geo = f.geometry
    Q = Q or geo.root
    k = k or gaussian_difference(geo.n)
    fam = family or SquareFamily(f, q, k)
    rep = build_sparse_pointwise(fam, Q, eta)
    coeffs, depth = {}, {}
    for P in rep.family.cubes():
        coeffs[P], depth[P] = tail_coefficient(f, P, q, k.epsilon)
    lhs = np.abs(fam.eval_f(Q))
    rhs = coefficient_sum(geo, Q, coeffs) ** (1.0 / q)
    const = float(safe_ratio(lhs, rhs).max())
    l1 = float(np.abs(f.values).sum()) * float(geo.cell_measure)
    weak = weak_l1_diagnostic(np.abs(fam.eval_f(geo.root)), l1, float(geo.cell_measure))
    quad = {"kernel_tail_bound": k.tail_bound(), "kernel_radius": k.radius,
            "max_explicit_dilations": max(depth.values(), default=0)}
    checks = {"finite_constant": math.isfinite(const)}
    return SquareReport(rep, coeffs, const, weak, quad, checks, {"q": q, "epsilon": k.epsilon})
