"""Dyadic sums Σ α_R χ_R: smallness constants, sparse bounds, S_q vs M, nonlinear potentials."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._blocks import block_reduce, upsample
from .curves import CurveRow, GoodLambdaCurve
from .dyadic import DyadicCube, RootGeometry
from .engine import RTOL, DominationReport, build_sparse_pointwise, coefficient_sum, safe_ratio
from .family import CubeFamily
from .gridfn import DiscreteMeasure, GridFunction


@dataclass(frozen=True)
class CubeCoefficients:
    """α_R ≥ 0 for R ∈ D(root); levels[g] holds generation g over the whole geometry."""

    geometry: RootGeometry
    levels: tuple
    root: DyadicCube | None = None

    def __post_init__(self):
        geo = self.geometry
        root = self.root or geo.root
        lv = []
        for g in range(geo.L + 1):
            a = np.asarray(self.levels[g], dtype=float).reshape((1 << g,) * geo.n).copy()
            if not np.isfinite(a).all() or (a < 0).any():
                raise ValueError("coefficients must be finite and nonnegative")
            inside = np.zeros_like(a, dtype=bool)
            if g >= root.gen:
                b = 1 << (g - root.gen)
                inside[tuple(slice(i * b, (i + 1) * b) for i in root.index)] = True
            a[~inside] = 0.0
            a.setflags(write=False)
            lv.append(a)
        object.__setattr__(self, "levels", tuple(lv))
        object.__setattr__(self, "root", root)

    @classmethod
    def zeros(cls, geometry: RootGeometry, root: DyadicCube | None = None) -> "CubeCoefficients":
        return cls(geometry, tuple(np.zeros((1 << g,) * geometry.n) for g in range(geometry.L + 1)), root)

    @classmethod
    def from_dict(cls, geometry: RootGeometry, values: dict, root: DyadicCube | None = None) -> "CubeCoefficients":
        lv = [np.zeros((1 << g,) * geometry.n) for g in range(geometry.L + 1)]
        for cube, v in values.items():
            c = DyadicCube.parse(cube) if isinstance(cube, str) else cube
            lv[c.gen][c.index] = v
        return cls(geometry, tuple(lv), root)

    def __getitem__(self, cube: DyadicCube) -> float:
        return float(self.levels[cube.gen][cube.index])

    def items(self):
        """Nonzero (cube, α) pairs in (generation, index) order."""
        for g, a in enumerate(self.levels):
            for idx in zip(*np.nonzero(a)):
                yield DyadicCube(g, tuple(int(i) for i in idx)), float(a[idx])

    def to_json(self) -> list:
        return [[c.address, v] for c, v in self.items()]

    @classmethod
    def from_json(cls, geometry: RootGeometry, data, root: DyadicCube | None = None) -> "CubeCoefficients":
        return cls.from_dict(geometry, {a: float(v) for a, v in data}, root)

    def power(self, p: float) -> "CubeCoefficients":
        return CubeCoefficients(self.geometry, tuple(a**p for a in self.levels), self.root)

    def scaled(self, c: float) -> "CubeCoefficients":
        return CubeCoefficients(self.geometry, tuple(a * c for a in self.levels), self.root)

    def restricted(self, cube: DyadicCube) -> "CubeCoefficients":
        return CubeCoefficients(self.geometry, self.levels, cube)

    def tile(self, g: int) -> np.ndarray:
        """α of the generation-g ancestor, on every leaf."""
        return upsample(self.levels[g], 1 << (self.geometry.L - g))


class SumsFamily(CubeFamily):
    """f_{Q'} = Σ_{R ∈ D(Q')} α_R χ_R; f_{P,Q'} = Σ over the strict chain from Q' down to P."""

    def __init__(self, alpha: CubeCoefficients):
        super().__init__(alpha.geometry, r=1.0, C_r=1.0)
        self.alpha = alpha
        L = alpha.geometry.L
        tiles = [alpha.tile(g) for g in range(L + 1)]
        suffix = [None] * (L + 2)
        suffix[L + 1] = np.zeros(alpha.geometry.shape)
        for g in range(L, -1, -1):
            suffix[g] = suffix[g + 1] + tiles[g]
        self._tiles = tiles
        self._suffix = suffix

    def _f_tiles(self, k):
        return self._suffix[k]

    def _diff_tiles(self, k_outer, k_inner):
        out = np.zeros(self.geometry.shape)
        for g in range(k_outer, k_inner):
            out += self._tiles[g]
        return out


def subtree_sums(alpha: CubeCoefficients, delta: float) -> list[np.ndarray]:
    """Σ_{R ∈ D(Q')} α_R^δ |R| for every cube Q', by generation."""
    geo = alpha.geometry
    n, L = geo.n, geo.L
    out = [None] * (L + 1)
    below = None
    for g in range(L, -1, -1):
        vol = float(geo.side) ** n * 2.0 ** (-g * n)
        s = alpha.levels[g] ** delta * vol
        if below is not None:
            s = s + block_reduce(below, 2, "sum")
        out[g] = s
        below = s
    return out


def smallness_constant(alpha: CubeCoefficients, delta: float) -> float:
    """max over Q' ∈ D(root) with α_{Q'} > 0 of Σ_{R∈D(Q')} α_R^δ|R| / (α_{Q'}^δ |Q'|)."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    geo = alpha.geometry
    sums = subtree_sums(alpha, delta)
    best = 0.0
    for g in range(alpha.root.gen, geo.L + 1):
        a = alpha.levels[g]
        vol = float(geo.side) ** geo.n * 2.0 ** (-g * geo.n)
        # α = 0 with mass below it: no finite C works
        if ((a == 0) & (sums[g] > 0)).any():
            return math.inf
        pos = a > 0
        if pos.any():
            best = max(best, float((sums[g][pos] / (a[pos] ** delta * vol)).max()))
    return best


def sum_reference(n: int, C: float, eta, delta: float) -> float:
    """(2^{n+2} C / (1-η))^{1/δ}: Chebyshev at the engine's quantile level."""
    return (2.0 ** (n + 2) * C / (1.0 - float(eta))) ** (1.0 / delta)


def sum_sparse(alpha: CubeCoefficients, delta: float = 1.0, eta=Fraction(1, 2),
               family: SumsFamily | None = None) -> DominationReport:
    """Engine run on the sums family, then Σ α_R χ_R ≤ c Σ_{P∈F} α_P χ_P with c reported."""
    C = smallness_constant(alpha, delta)
    if not math.isfinite(C):
        raise ValueError("smallness constant is infinite for this delta")
    geo = alpha.geometry
    Q = alpha.root
    fam = family or SumsFamily(alpha)
    rep = build_sparse_pointwise(fam, Q, eta)
    lhs = fam.eval_f(Q)
    coeffs = {P: alpha[P] for P in rep.family.cubes()}
    rhs = coefficient_sum(geo, Q, coeffs)
    ratio = safe_ratio(lhs, rhs)
    const = float(ratio.max()) if ratio.size else 0.0
    ref = sum_reference(geo.n, C, eta, delta)
    # γ_P against both the cube-wise Chebyshev value and the global reference
    cheb_ok, ref_ok = True, True
    for P in rep.family.cubes():
        gam = rep.coefficients[P]
        fP = fam.eval_f(P)
        local = (2.0 ** (geo.n + 2) * float(np.mean(fP**delta)) / (1.0 - float(eta))) ** (1.0 / delta)
        cheb_ok &= gam <= local * (1 + RTOL) + 1e-300
        ref_ok &= gam <= ref * alpha[P] * (1 + RTOL)
    rep.checks["gamma_chebyshev"] = bool(cheb_ok)
    rep.checks["gamma_reference"] = bool(ref_ok)
    rep.checks["sum_constant"] = const <= rep.paper_bound * ref * (1 + RTOL)
    rep.extra.update({"delta": delta, "smallness_constant": C, "reference": ref,
                      "sum_constant": const, "sum_bound": rep.paper_bound * ref})
    rep.extra["alpha_coefficients"] = len(coeffs)
    return rep


def s_and_m(alpha: CubeCoefficients, q: float) -> tuple[GridFunction, GridFunction]:
    """S_q(α) = (Σ α_R^q χ_R)^{1/q} and M(α) = sup α_R χ_R over D(root)."""
    if q <= 0:
        raise ValueError("q must be positive")
    geo = alpha.geometry
    S = np.zeros(geo.shape)
    M = np.zeros(geo.shape)
    for g in range(geo.L + 1):
        t = alpha.tile(g)
        S += t**q
        np.maximum(M, t, out=M)
    return GridFunction(geo, S ** (1.0 / q)), GridFunction(geo, M)


def potential(mu: DiscreteMeasure, q: float, gamma: float):
    """α_Q = μ(Q)/|Q|^{1-γ/n}; returns (T_{q,γ}(μ), M_γ(μ), α)."""
    geo = mu.geometry
    n, L = geo.n, geo.L
    if not 0 < gamma < n:
        raise ValueError("gamma must lie in (0, n)")
    levels = [None] * (L + 1)
    m = np.asarray(mu.masses, dtype=float)
    for g in range(L, -1, -1):
        vol = float(geo.side) ** n * 2.0 ** (-g * n)
        levels[g] = m / vol ** (1.0 - gamma / n)
        if g:
            m = block_reduce(m, 2, "sum")
    alpha = CubeCoefficients(geo, tuple(levels))
    T, M = s_and_m(alpha, q)
    return T, M, alpha


def first_exceedance(alpha: CubeCoefficients, q: float, lam: float) -> np.ndarray:
    """Per leaf, the first generation g with Σ_{g' ≤ g} α^q > λ^q along its chain (L+1 if none)."""
    geo = alpha.geometry
    L = geo.L
    acc = np.zeros(geo.shape)
    first = np.full(geo.shape, L + 1, dtype=int)
    thr = lam**q
    for g in range(L + 1):
        acc += alpha.tile(g) ** q
        hit = (acc > thr) & (first > L)
        first[hit] = g
    return first


def good_lambda_sums(alpha: CubeCoefficients, q: float, delta: float, lambdas, eps_grid,
                     eta=Fraction(1, 2)) -> GoodLambdaCurve:
    """|{S_q > 2λ, M ≤ ελ}| against |{S_q > λ}|, with the constructive overlap certificate.

    For each maximal cube Q_j of {S_q > λ} meeting a bad set, the sums family of
    α^q on D(Q_j) is run through the engine; c_j is its verified constant and
    the certificate is overlap·ε^q ≥ (2^q - 1)/c_j on the bad leaves of Q_j.
    """
    if not 0 < delta <= min(q, 1.0):
        raise ValueError("need 0 < delta <= min(q, 1)")
    geo = alpha.geometry
    L = geo.L
    S, M = s_and_m(alpha, q)
    Sv, Mv = S.values, M.values
    aq = alpha.power(q)
    cache: dict = {}
    cell = float(geo.cell_measure)
    curve = GoodLambdaCurve(extra={"min_chain_ratio": math.inf, "cubes_run": 0})
    c_max = 0.0
    for lam in lambdas:
        first = first_exceedance(alpha, q, lam)
        sup_count = int((Sv > lam).sum())
        for eps in eps_grid:
            if not 0 < eps <= 1:
                raise ValueError("eps must lie in (0, 1]")
            bad = (Sv > 2 * lam) & (Mv <= eps * lam)
            cnt = int(bad.sum())
            ov_min = None
            if cnt:
                for idx in zip(*np.nonzero(bad)):
                    g = int(first[idx])
                    Qj = geo.leaf_cube(tuple(int(i) for i in idx)).ancestor(g)
                    if Qj not in cache:
                        sub = aq.restricted(Qj)
                        rep = sum_sparse(sub, delta / q, eta, SumsFamily(sub))
                        cache[Qj] = rep
                    rep = cache[Qj]
                    cj = rep.extra["sum_constant"]
                    c_max = max(c_max, cj)
                    # local chain sum from Q_j down to the leaf
                    local = sum(float(alpha.tile(gg)[idx]) ** q for gg in range(g, L + 1))
                    chain_ratio = float(local / ((2**q - 1) * lam**q))
                    curve.extra["min_chain_ratio"] = min(curve.extra["min_chain_ratio"], chain_ratio)
                    ov = int(rep.family.base.overlap()[geo.leaf_slice(geo.leaf_cube(tuple(int(i) for i in idx)), Qj)].max())
                    ok = chain_ratio > 1 and ov * eps**q >= (2**q - 1) / cj * (1 - 1e-12) and rep.passed
                    curve.certificate_ok &= bool(ok)
                    ov_min = ov if ov_min is None else min(ov_min, ov)
            ratio = cnt / sup_count if sup_count else 0.0
            curve.rows.append(CurveRow(float(lam), float(eps), cnt * cell, sup_count * cell, ratio, ov_min))
    curve.c_engine = c_max if c_max else None
    curve.extra["cubes_run"] = len(cache)
    if curve.extra["min_chain_ratio"] == math.inf:
        curve.extra["min_chain_ratio"] = None
    return curve
