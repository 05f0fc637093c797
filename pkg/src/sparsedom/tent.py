"""Discretised upper half-space: cone and Carleson functionals, tent sparse bounds, good-λ.

A half-space function lives on a 3x padded ambient grid (the analysis root in
the middle, zero outside) times L scale bands; band j covers
t ∈ [ℓ 2^{-j}, ℓ 2^{-j+1}). Scales below one leaf are not represented. A cell
belongs to a cone if its center does; the t-integral over each band is done
exactly (closed form for indicators, Gauss–Legendre in u = 1/t for the smooth
part of the cutoff, whose integrand is analytic there).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.signal import correlate

from ._blocks import block_reduce, upsample
from .curves import CurveRow, GoodLambdaCurve
from .dyadic import DyadicCube, RootGeometry
from .engine import DominationReport, build_sparse_pointwise, coefficient_sum, safe_ratio
from .family import CubeFamily

PAD = 3
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class HalfSpaceFunction:
    geometry: RootGeometry  # the analysis root
    values: np.ndarray  # shape (3N,)*n + (L,)

    def __post_init__(self):
        geo = self.geometry
        shape = (PAD * geo.cells_per_axis,) * geo.n + (geo.L,)
        v = np.asarray(self.values, dtype=float).reshape(shape)
        if not np.isfinite(v).all():
            raise ValueError("half-space values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def ambient_shape(self) -> tuple[int, ...]:
        return (PAD * self.geometry.cells_per_axis,) * self.geometry.n

    def band(self, j: int) -> tuple[float, float]:
        ell = float(self.geometry.side)
        return ell * 2.0 ** (-j), ell * 2.0 ** (-j + 1)

    def analysis_slice(self) -> tuple[slice, ...]:
        N = self.geometry.cells_per_axis
        return (slice(N, 2 * N),) * self.geometry.n

    def scaled(self, c: float) -> "HalfSpaceFunction":
        return HalfSpaceFunction(self.geometry, self.values * c)

    @classmethod
    def zeros(cls, geometry: RootGeometry) -> "HalfSpaceFunction":
        return cls(geometry, np.zeros((PAD * geometry.cells_per_axis,) * geometry.n + (geometry.L,)))


def band_weight(n: int, t_lo: float, t_hi: float) -> float:
    """∫_{t_lo}^{t_hi} dt / t^{n+1}."""
    return (t_lo ** (-n) - t_hi ** (-n)) / n


def _indicator_weights(n, t_lo, t_hi, c):
    lo = np.maximum(t_lo, c)
    with np.errstate(divide="ignore"):
        w = (lo ** (-n) - t_hi ** (-n)) / n
    return np.where(lo < t_hi, w, 0.0)


def _smooth_weights(n, t_lo, t_hi, c):
    """∫ over t in [max(t_lo, c/2), min(t_hi, c)] of cos⁴(π(c/t - 1)/2) dt/t^{n+1}."""
    a = np.maximum(t_lo, c / 2.0)
    b = np.minimum(t_hi, c)
    live = (a < b) & (c > 0)
    out = np.zeros_like(c)
    if not live.any():
        return out
    cc, u1, u2 = c[live], 1.0 / b[live], 1.0 / a[live]
    mid, half = (u1 + u2) / 2.0, (u2 - u1) / 2.0
    u = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    g = np.cos(np.pi * (cc[:, None] * u - 1.0) / 2.0) ** 4 * u ** (n - 1)
    out[live] = half * (g @ _GL_WEIGHTS)
    return out


def cone_weights(n: int, h: float, t_lo: float, t_hi: float, aperture: float, profile: str,
                 R: int) -> np.ndarray:
    """Weights on offsets d ∈ [-R, R]^n (in cells) for one band.

    ``profile="indicator"``: ∫ 1[h|d| < a t] dt/t^{n+1}.
    ``profile="phi2"``: ∫ Φ(h|d|/(a t))² dt/t^{n+1} with the cos² cutoff.
    """
    ax = np.arange(-R, R + 1, dtype=float)
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    dist = h * np.sqrt(sum(g * g for g in grids))
    c = dist / aperture
    w = _indicator_weights(n, t_lo, t_hi, c)
    if profile == "indicator":
        return w
    if profile == "phi2":
        return w + _smooth_weights(n, t_lo, t_hi, c)
    raise ValueError(f"unknown profile {profile!r}")


class TentField:
    """Band tables B[x, j] = Σ_y F(y, j)² W_j(x - y) |cell| for x in the analysis root."""

    def __init__(self, F: HalfSpaceFunction):
        self.F = F
        self._tables: dict = {}
        geo = F.geometry
        self.h = float(geo.cell_side)
        self.N = geo.cells_per_axis
        self.F2 = F.values**2

    def _radius(self, aperture: float, t_hi: float) -> int:
        return int(min(math.ceil(aperture * t_hi / self.h) + 1, 2 * self.N))

    def kernels(self, j: int, specs) -> list[np.ndarray]:
        """Kernels of one band for several (profile, aperture) specs, on a common support."""
        n = self.F.geometry.n
        t_lo, t_hi = self.F.band(j)
        R = max(self._radius(a * (2 if p == "phi2" else 1), t_hi) for p, a in specs)
        return [cone_weights(n, self.h, t_lo, t_hi, a, p, R) for p, a in specs], R

    def table(self, profile: str, aperture: float) -> np.ndarray:
        key = (profile, float(aperture))
        if key not in self._tables:
            self._build([key])
        return self._tables[key]

    def build(self, specs) -> None:
        todo = [(p, float(a)) for p, a in specs if (p, float(a)) not in self._tables]
        if todo:
            self._build(todo)

    def _build(self, specs) -> None:
        """Compute tables for several specs with identical correlation shapes per band.

        Sharing the support keeps every comparison between tables exact: the
        kernels are ordered entrywise, and so are the rounded sums.
        """
        geo = self.F.geometry
        n, L, N = geo.n, geo.L, self.N
        cell = float(geo.cell_measure)
        out = {s: np.zeros((N,) * n + (L,)) for s in specs}
        for j in range(1, L + 1):
            ks, R = self.kernels(j, specs)
            if specs and ("phi2" in [p for p, _ in specs]):
                ks = self._order(specs, ks, j, R)
            src = self.F2[..., j - 1]
            pad = max(0, R - N)
            if pad:
                src = np.pad(src, pad)
            start = N + pad - R
            region = src[(slice(start, start + N + 2 * R),) * n]
            for s, K in zip(specs, ks):
                if not region.any():
                    continue
                res = correlate(region, K, mode="valid", method="direct")
                out[s][..., j - 1] = np.maximum(res, 0.0) * cell
        for s in specs:
            out[s].setflags(write=False)
            self._tables[s] = out[s]

    def _order(self, specs, ks, j, R):
        """Clip each Φ² kernel between the indicator kernels at apertures α and 2α."""
        n = self.F.geometry.n
        t_lo, t_hi = self.F.band(j)
        fixed = []
        for (p, a), K in zip(specs, ks):
            if p == "phi2":
                lo = cone_weights(n, self.h, t_lo, t_hi, a, "indicator", R)
                hi = cone_weights(n, self.h, t_lo, t_hi, 2 * a, "indicator", R)
                K = np.clip(K, lo, hi)
            fixed.append(K)
        return fixed

    def truncated(self, profile: str, aperture: float, k: int) -> np.ndarray:
        """Σ_{j>k} B[:, j]: the squared cone functional truncated at t < ℓ 2^{-k}."""
        t = self.table(profile, aperture)
        return t[..., k:].sum(axis=-1)

    def band_range(self, profile: str, aperture: float, k_outer: int, k_inner: int) -> np.ndarray:
        t = self.table(profile, aperture)
        return t[..., k_outer:k_inner].sum(axis=-1)


def _leaf_index(geo: RootGeometry, x) -> tuple[int, ...]:
    if isinstance(x, DyadicCube):
        if x.gen != geo.L:
            raise ValueError("x must be a leaf cube")
        return x.index
    return tuple(int(i) for i in np.atleast_1d(x))


def cone_functional(F: HalfSpaceFunction, x, alpha: float, h: float | None = None) -> float:
    """A^{(α)}_h(F)(x) at a leaf x of the analysis root, by a direct sum (no band tables).

    Bands straddling h are integrated over [t_lo, h) only.
    """
    if alpha <= 0:
        raise ValueError("aperture must be positive")
    geo = F.geometry
    n, N = geo.n, geo.cells_per_axis
    hcell = float(geo.cell_side)
    xi = np.array(_leaf_index(geo, x)) + N  # ambient index
    grids = np.meshgrid(*([np.arange(PAD * N)] * n), indexing="ij")
    dist = hcell * np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, xi)).astype(float))
    total = 0.0
    for j in range(1, geo.L + 1):
        t_lo, t_hi = F.band(j)
        if h is not None:
            if h <= t_lo:
                continue
            t_hi = min(t_hi, h)
        w = _indicator_weights(n, t_lo, t_hi, dist / alpha)
        total += float((F.values[..., j - 1] ** 2 * w).sum())
    return math.sqrt(total * float(geo.cell_measure))


def truncated_cone(F: HalfSpaceFunction, alpha: float, k: int = 0, field_: TentField | None = None) -> np.ndarray:
    """A^{(α)}_{ℓ 2^{-k}}(F) on every leaf of the analysis root."""
    tf = field_ or TentField(F)
    return np.sqrt(tf.truncated("indicator", alpha, k))


def carleson_functional(F: HalfSpaceFunction, alpha: float, q: float = 2.0,
                        field_: TentField | None = None) -> np.ndarray:
    """sup over dyadic Q ∋ x of ((1/|Q|)∫_Q A^{(α)}_{ℓ_Q}(F)^q)^{1/q}, on every leaf."""
    if q <= 0:
        raise ValueError("q must be positive")
    tf = field_ or TentField(F)
    geo = F.geometry
    n, L = geo.n, geo.L
    out = np.zeros(geo.shape)
    for k in range(L + 1):
        b = 1 << (L - k)
        vals = tf.truncated("indicator", alpha, k) ** (q / 2.0)
        avg = block_reduce(vals, b, "sum") / b**n
        np.maximum(out, upsample(avg, b), out=out)
    return out ** (1.0 / q)


class TentFamily(CubeFamily):
    """f_Q = (∫_0^{ℓ_Q}∫ |F|² Φ((x-y)/(αt))² dy dt/t^{n+1})^{1/2}, f_{P,Q} over [ℓ_P, ℓ_Q)."""

    def __init__(self, F: HalfSpaceFunction, alpha: float = 1.0, field_: TentField | None = None):
        super().__init__(F.geometry, r=2.0, C_r=1.0)
        self.F = F
        self.alpha = float(alpha)
        self.field = field_ or TentField(F)

    def _f_tiles(self, k):
        return np.sqrt(self.field.truncated("phi2", self.alpha, k))

    def _diff_tiles(self, k_outer, k_inner):
        return np.sqrt(self.field.band_range("phi2", self.alpha, k_outer, k_inner))


@dataclass
class TentReport:
    engine: DominationReport
    coefficients: dict  # P -> (1/|P|)∫_P A^{(β)}_{ℓ_P}²
    theorem_constant: float
    sandwich_ok: bool
    beta: float
    checks: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.engine.passed

    def summary(self) -> dict:
        return {
            "engine": self.engine.summary(),
            "theorem_constant": self.theorem_constant,
            "sandwich_ok": self.sandwich_ok,
            "beta": self.beta,
            "checks": dict(sorted(self.checks.items())),
            "extra": {k: self.extra[k] for k in sorted(self.extra)},
        }


def tent_specs(alpha: float, n: int) -> list[tuple[str, float]]:
    beta = 4 * alpha + math.sqrt(n)
    return [("indicator", alpha), ("phi2", alpha), ("indicator", 2 * alpha), ("indicator", beta)]


def tent_sparse(F: HalfSpaceFunction, Q: DyadicCube | None = None, alpha: float = 1.0,
                eta=Fraction(1, 2), field_: TentField | None = None) -> TentReport:
    """Engine run on the tent family plus the bound by averages of A^{(4α+√n)}_{ℓ_P}²."""
    geo = F.geometry
    Q = Q or geo.root
    tf = field_ or TentField(F)
    tf.build(tent_specs(alpha, geo.n))
    beta = 4 * alpha + math.sqrt(geo.n)
    fam = TentFamily(F, alpha, tf)
    rep = build_sparse_pointwise(fam, Q, eta)
    sl = geo.leaf_slice(Q)
    k = Q.gen
    lo = tf.truncated("indicator", alpha, k)[sl]
    mid = tf.truncated("phi2", alpha, k)[sl]
    hi = tf.truncated("indicator", 2 * alpha, k)[sl]
    sandwich = bool((lo <= mid).all() and (mid <= hi).all())
    coeffs = {}
    for P in rep.family.cubes():
        vals = tf.truncated("indicator", beta, P.gen)[geo.leaf_slice(P)]
        coeffs[P] = float(vals.mean())
    lhs = np.sqrt(lo)
    rhs = np.sqrt(coefficient_sum(geo, Q, coeffs))
    const = float(safe_ratio(lhs, rhs).max())
    checks = {"sandwich": sandwich, "finite_constant": math.isfinite(const)}
    return TentReport(rep, coeffs, const, sandwich, beta, checks)


def tent_good_lambda(F: HalfSpaceFunction, lambdas, gammas, alpha: float = 1.0,
                     eta=Fraction(1, 2), field_: TentField | None = None) -> GoodLambdaCurve:
    """Bad sets {A > 2λ, C ≤ γλ} against {A^{(5√n+1)} > λ}, with the overlap certificate.

    C is the cube form of the Carleson functional at aperture α. The
    certificate follows the chain A² ≤ c_tent² Σ κ_P χ_P ≤ c_tent² K C² Σ χ_P
    where κ_P are the tent coefficients and K = max_{x ∈ P ∈ F} κ_P / C(x)²
    is measured on the same run; c_engine = c_tent² K.
    """
    geo = F.geometry
    n = geo.n
    tf = field_ or TentField(F)
    big = 5 * math.sqrt(n) + 1
    tf.build(tent_specs(alpha, n) + [("indicator", big)])
    rep = tent_sparse(F, geo.root, alpha, eta, tf)
    A = truncated_cone(F, alpha, 0, tf)
    A_big = truncated_cone(F, big, 0, tf)
    C = carleson_functional(F, alpha, 2.0, tf)
    overlap = rep.engine.family.base.overlap()
    K = 0.0
    for P, kappa in rep.coefficients.items():
        K = max(K, float(safe_ratio(np.full(geo.local_shape(P), kappa), C[geo.leaf_slice(P)] ** 2).max()))
    c_engine = rep.theorem_constant**2 * K
    cell = float(geo.cell_measure)
    curve = GoodLambdaCurve(c_engine=c_engine,
                            extra={"theorem_constant": rep.theorem_constant, "comparability": K,
                                   "alpha_big": big})
    for lam in lambdas:
        sup_count = int((A_big > lam).sum())
        for gam in gammas:
            if not 0 < gam <= 1:
                raise ValueError("gamma must lie in (0, 1]")
            bad = (A > 2 * lam) & (C <= gam * lam)
            cnt = int(bad.sum())
            ov_min = int(overlap[bad].min()) if cnt else None
            if cnt:
                ok = ov_min * gam**2 >= 3.0 / c_engine * (1 - 1e-12)
                curve.certificate_ok &= bool(ok)
            ratio = cnt / sup_count if sup_count else 0.0
            curve.rows.append(CurveRow(float(lam), float(gam), cnt * cell, sup_count * cell, ratio, ov_min))
    return curve
