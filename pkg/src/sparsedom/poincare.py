"""Polynomial projections on dyadic cubes, smallness functionals and self-improving bounds."""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from ._blocks import block_reduce, from_blocks, to_blocks, upsample
from .dyadic import DyadicCube, RootGeometry
from .engine import DominationReport, build_sparse_pointwise, coefficient_sum, safe_ratio
from .family import CubeFamily, local_maximal_tiles
from .gridfn import GridFunction, Weight


class DegenerateCube(ValueError):
    pass


def exponents(n: int, m: int) -> list[tuple[int, ...]]:
    """Multi-indices of total degree ≤ m, graded then lexicographic."""
    out = []
    for d in range(m + 1):
        out += sorted((e for e in itertools.product(range(d + 1), repeat=n) if sum(e) == d), reverse=True)
    return out


def cell_average_monomials(n: int, m: int, cells: int) -> np.ndarray:
    """Matrix (cells^n, dim) of cell averages of monomials in u ∈ [-1, 1]^n."""
    edges = np.linspace(-1.0, 1.0, cells + 1)
    a, b = edges[:-1], edges[1:]
    one_d = np.stack([(b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a)) for k in range(m + 1)], axis=1)
    cols = []
    for e in exponents(n, m):
        col = one_d[:, e[0]]
        for axis in range(1, n):
            col = np.multiply.outer(col, one_d[:, e[axis]])
        cols.append(np.asarray(col).ravel())
    return np.stack(cols, axis=1)


class PolynomialProjector:
    """Discrete L²(Q) projection onto cell-averaged polynomials of degree ≤ m.

    All cubes with the same number of cells share one orthonormal basis, so
    bases are cached by relative depth.
    """

    def __init__(self, n: int, m: int):
        if m < 0:
            raise ValueError("degree must be nonnegative")
        self.n = n
        self.m = m
        self.dim = math.comb(n + m, m)
        self._bases: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def basis(self, depth: int, strict: bool = True) -> np.ndarray:
        cells = 1 << depth
        if strict and cells < self.m + 1:
            raise DegenerateCube(f"{cells} cells per axis cannot carry degree {self.m}")
        with self._lock:
            if depth not in self._bases:
                A = cell_average_monomials(self.n, self.m, cells)
                U, s, _ = np.linalg.svd(A, full_matrices=False)
                rank = int((s > s[0] * 1e-10).sum())
                B = U[:, :rank]
                B.setflags(write=False)
                self._bases[depth] = B
            return self._bases[depth]

    def project_blocks(self, rows: np.ndarray, depth: int, strict: bool = True) -> np.ndarray:
        B = self.basis(depth, strict)
        return (rows @ B) @ B.T

    def project_tiles(self, values: np.ndarray, k: int, L: int) -> np.ndarray:
        """P_R f on every generation-k cube R, rank-revealing on small cubes."""
        b = 1 << (L - k)
        rows = to_blocks(values, b)
        return from_blocks(self.project_blocks(rows, L - k, strict=False), values.ndim, b)


def poly_project(f: GridFunction, Q: DyadicCube, m: int, strict: bool = True) -> np.ndarray:
    geo = f.geometry
    depth = geo.L - Q.gen
    proj = PolynomialProjector(geo.n, m)
    v = f.on(Q)
    out = proj.project_blocks(v.reshape(1, -1), depth, strict)
    return out.reshape(v.shape)


def projection_sup_constant(f: GridFunction, Q: DyadicCube, m: int) -> float:
    """‖P_Q f‖_∞ / ⟨|f|⟩_Q on this input."""
    p = poly_project(f, Q, m)
    avg = float(np.abs(f.on(Q)).mean())
    return float(np.abs(p).max() / avg) if avg > 0 else 0.0


class PoincareFamily(CubeFamily):
    """f_Q = f - P_Q f (mode "pointwise") or M_Q(f - P_Q f) (mode "MQ"); canonical differences."""

    def __init__(self, f: GridFunction, m: int, mode: str = "pointwise"):
        if mode not in ("pointwise", "MQ"):
            raise ValueError("mode must be 'pointwise' or 'MQ'")
        super().__init__(f.geometry, 1.0, 1.0)
        self.f = f
        self.m = m
        self.mode = mode
        self.projector = PolynomialProjector(f.geometry.n, m)

    def projection(self, k):
        return self._memo(("P", k), lambda: self.projector.project_tiles(self.f.values, k, self.geometry.L))

    def residual(self, k):
        return self._memo(("res", k), lambda: self.f.values - self.projection(k))

    def mean_residual(self, k) -> np.ndarray:
        """⟨|f - P_R f|⟩_R for every generation-k cube R (shape (2^k,)*n)."""
        def build():
            b = 1 << (self.geometry.L - k)
            return block_reduce(np.abs(self.residual(k)), b, "sum") / b**self.geometry.n
        return self._memo(("beta", k), build)

    def _f_tiles(self, k):
        if self.mode == "pointwise":
            return self.residual(k)
        return local_maximal_tiles(np.abs(self.residual(k)), k, self.geometry.L)


def cube_coefficient_levels(fam: CubeFamily, Q: DyadicCube, eta) -> dict[int, np.ndarray]:
    """γ_R = (f_R χ_R)*(t_R) + (m^#_R)*(t_R) for every R ∈ D(Q), as arrays per generation."""
    geo = fam.geometry
    n = geo.n
    eta = Fraction(eta)
    out = {}
    sl = geo.leaf_slice(Q)
    for k in range(Q.gen, geo.L + 1):
        b = 1 << (geo.L - k)
        M = b**n
        idx = math.floor((1 - eta) / 2 ** (n + 2) * M)
        vals = []
        for arr in (np.abs(fam.f_tiles(k)[sl]), fam.sharp_tiles(k)[sl]):
            rows = to_blocks(arr, b)
            if idx >= M:
                vals.append(np.zeros(rows.shape[0]))
            else:
                vals.append(-np.partition(-rows, idx, axis=1)[:, idx])
        side = arr.shape[0] // b
        out[k] = (vals[0] + vals[1]).reshape((side,) * n)
    return out


@dataclass
class PoincareReport:
    engine: DominationReport
    rhs_coefficients: dict
    prop_constant: float
    coefficient_constant: float
    certified_constant: float
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.engine.passed

    def summary(self) -> dict:
        return {
            "engine": self.engine.summary(),
            "prop_constant": self.prop_constant,
            "coefficient_constant": self.coefficient_constant,
            "certified_constant": self.certified_constant,
            "checks": dict(sorted(self.checks.items())),
        }


def poincare_sparse(f: GridFunction, Q: DyadicCube | None = None, m: int = 0, eta=Fraction(1, 2),
                    mode: str = "pointwise") -> PoincareReport:
    """Sparse bound of |f - P_Q f| (or M_Q(f - P_Q f)) by Σ ⟨|f - P_R f|⟩_R χ_R.

    ``coefficient_constant`` is max over all R ∈ D(Q) of γ_R / ⟨|f - P_R f|⟩_R;
    it is nondecreasing in η because the rearrangement is evaluated at a
    smaller time. ``certified_constant`` = (engine bound) × that ratio.
    """
    geo = f.geometry
    Q = Q or geo.root
    fam = PoincareFamily(f, m, mode)
    rep = build_sparse_pointwise(fam, Q, eta)
    beta = {}
    for P in rep.family.cubes():
        lvl = fam.mean_residual(P.gen)
        beta[P] = float(lvl[P.index])
    lhs = np.abs(fam.eval_f(Q))
    rhs = coefficient_sum(geo, Q, beta)
    prop_constant = float(safe_ratio(lhs, rhs).max())
    gam = cube_coefficient_levels(fam, Q, eta)
    K = 0.0
    for k, g in gam.items():
        b = fam.mean_residual(k)
        s = 1 << (k - Q.gen)
        sub = b[tuple(slice(i * s, (i + 1) * s) for i in Q.index)]
        K = max(K, float(safe_ratio(g, sub).max()))
    certified = rep.paper_bound * K
    checks = {
        "prop_inequality": prop_constant <= certified * (1 + 1e-9) or certified == math.inf,
        "finite": math.isfinite(K),
    }
    return PoincareReport(rep, beta, prop_constant, K, certified, checks)


# smallness functionals --------------------------------------------------------

class SmallnessFunctional:
    """a : D(Q0) -> [0, ∞), given level by level as arrays of shape (2^k,)*n."""

    def __init__(self, geometry: RootGeometry, level: Callable[[int], np.ndarray], kind: str = "user"):
        self.geometry = geometry
        self._level = level
        self.kind = kind
        self._cache: dict[int, np.ndarray] = {}

    def level(self, k: int) -> np.ndarray:
        if k not in self._cache:
            v = np.asarray(self._level(k), dtype=float).reshape(((1 << k),) * self.geometry.n)
            if (v < 0).any():
                raise ValueError("a smallness functional must be nonnegative")
            self._cache[k] = v
        return self._cache[k]

    def __call__(self, cube: DyadicCube) -> float:
        return float(self.level(cube.gen)[cube.index])

    def scaled(self, c: float) -> "SmallnessFunctional":
        return SmallnessFunctional(self.geometry, lambda k: c * self.level(k), self.kind)

    @classmethod
    def oscillation(cls, f: GridFunction, m: int = 0) -> "SmallnessFunctional":
        """a(Q) = ⟨|f - P_Q f|⟩_Q."""
        fam = PoincareFamily(f, m)
        return cls(f.geometry, fam.mean_residual, "oscillation")

    @classmethod
    def power(cls, geometry: RootGeometry, s: float, scale: float = 1.0) -> "SmallnessFunctional":
        """a(Q) = scale·|Q|^{1/s}."""
        def level(k):
            vol = float(geometry.side) ** geometry.n * 2.0 ** (-k * geometry.n)
            return np.full(((1 << k),) * geometry.n, scale * vol ** (1.0 / s))
        return cls(geometry, level, "power")

    @classmethod
    def table(cls, geometry: RootGeometry, values: dict[str, float]) -> "SmallnessFunctional":
        """User table of cube address -> value; absent cubes are 0."""
        parsed = {DyadicCube.parse(a): float(v) for a, v in values.items()}

        def level(k):
            out = np.zeros(((1 << k),) * geometry.n)
            for c, v in parsed.items():
                if c.gen == k:
                    out[c.index] = v
            return out
        return cls(geometry, level, "user-table")


@dataclass(frozen=True)
class SmallnessResult:
    value: float
    witness: DyadicCube | None
    exact: bool
    budget: str
    candidates: int


def _weight_levels(geo: RootGeometry, w: Weight | None) -> list[np.ndarray]:
    cell = float(geo.cell_measure)
    base = (w.function.values if w is not None else np.ones(geo.shape)) * cell
    return [block_reduce(base, 1 << (geo.L - k), "sum") for k in range(geo.L + 1)]


def _sd_ratio(A, B, wQ, volQ, aQ, p, s):
    if A <= 0:
        return 0.0
    if aQ <= 0:
        return math.inf
    return (A / wQ) ** (1.0 / p) / ((B / volQ) ** (1.0 / s) * aQ)


def smallness_norm(a: SmallnessFunctional, w: Weight | None, p: float, s: float, Q: DyadicCube | None = None,
                   budget: str = "exact", samples: int = 200, seed: int = 0,
                   extra: list[list[DyadicCube]] | None = None) -> SmallnessResult:
    """Largest ratio ((1/w(Q'))Σ a(Q_j)^p w(Q_j))^{1/p} / ((Σ|Q_j|/|Q'|)^{1/s} a(Q')) found.

    ``budget="exact"`` maximises over every antichain of every D(Q') by
    combining per-subtree Pareto frontiers of (Σ a^p w, Σ|Q_j|); the result is
    then the norm itself, not a lower bound. ``budget="sampled"`` tries
    singletons, full generations, seeded random antichains and ``extra``.
    """
    if p < 1 or s < 1:
        raise ValueError("p and s must be at least 1")
    geo = a.geometry
    Q = Q or geo.root
    wl = _weight_levels(geo, w)
    vol = [float(geo.side) ** geo.n * 2.0 ** (-k * geo.n) for k in range(geo.L + 1)]
    cell_vol = vol[geo.L]
    if budget == "exact":
        return _smallness_exact(a, wl, vol, cell_vol, p, s, Q)
    if budget != "sampled":
        raise ValueError(f"unknown budget {budget!r}")
    from .rng import SplitMix64

    best, wit, count = 0.0, None, 0

    def score(top: DyadicCube, fam):
        A = sum(a(c) ** p * float(wl[c.gen][c.index]) for c in fam)
        B = sum(vol[c.gen] for c in fam)
        return _sd_ratio(A, B, float(wl[top.gen][top.index]), vol[top.gen], a(top), p, s)

    rng = SplitMix64(seed)
    for top in geo.subcubes(Q):
        fams = [[c] for c in geo.subcubes(top)]
        fams += [list(geo.cubes(k, top)) for k in range(top.gen, geo.L + 1)]
        for _ in range(samples if top == Q else 0):
            # random antichain: walk down, stopping at each cube with prob 1/2
            chosen, stack = [], [top]
            while stack:
                c = stack.pop()
                u = rng.random(2)
                if u[0] < 0.5 or c.gen == geo.L:
                    if u[1] < 0.7:
                        chosen.append(c)
                else:
                    stack.extend(geo.children(c))
            if chosen:
                fams.append(chosen)
        for fam in (extra or []):
            if fam and all(top.contains(c) for c in fam):
                fams.append(fam)
        for fam in fams:
            count += 1
            v = score(top, fam)
            if v > best:
                best, wit = v, top
    return SmallnessResult(best, wit, False, "sampled", count)


def _smallness_exact(a, wl, vol, cell_vol, p, s, Q) -> SmallnessResult:
    geo = a.geometry
    n = geo.n
    best, wit = 0.0, None
    # frontier per cube: dict leaf_count -> max A; start at leaves and go up
    frontiers: dict[DyadicCube, dict[int, float]] = {}
    count = 0
    for k in range(geo.L, Q.gen - 1, -1):
        aval = a.level(k)
        for c in geo.cubes(k, Q):
            if k == geo.L:
                front = {0: 0.0}
            else:
                front = {0: 0.0}
                for ch in geo.children(c):
                    nxt: dict[int, float] = {}
                    for b1, a1 in front.items():
                        for b2, a2 in frontiers[ch].items():
                            key = b1 + b2
                            val = a1 + a2
                            if val > nxt.get(key, -1.0):
                                nxt[key] = val
                    front = _prune(nxt)
                for ch in geo.children(c):
                    del frontiers[ch]
            own = float(aval[c.index]) ** p * float(wl[k][c.index])
            size = 1 << (n * (geo.L - k))
            if own > front.get(size, -1.0):
                front[size] = own
            front = _prune(front)
            frontiers[c] = front
            aQ = float(aval[c.index])
            for B, A in front.items():
                if B == 0:
                    continue
                count += 1
                v = _sd_ratio(A, B * cell_vol, float(wl[k][c.index]), vol[k], aQ, p, s)
                if v > best:
                    best, wit = v, c
    return SmallnessResult(best, wit, True, "exact", count)


def _prune(front: dict[int, float]) -> dict[int, float]:
    """Keep Pareto points: larger A with smaller leaf count B."""
    out = {}
    top = -1.0
    for B in sorted(front):
        A = front[B]
        if A > top:
            out[B] = A
            top = A
    return out


# self-improvement ---------------------------------------------------------------

@dataclass
class SelfImproveReport:
    mode: str
    lhs: float
    rhs: float
    sum_phi: float
    factor: float
    prop_constant: float
    a_Q: float
    norm: float | None
    vacuous: bool
    checks: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> dict:
        d = {k: getattr(self, k) for k in ("mode", "lhs", "rhs", "sum_phi", "factor", "prop_constant",
                                           "a_Q", "norm", "vacuous")}
        d["checks"] = dict(sorted(self.checks.items()))
        d["extra"] = {k: self.extra[k] for k in sorted(self.extra)}
        return d


def w_r(geo: RootGeometry, Q: DyadicCube, w: np.ndarray, r: float) -> float:
    """|Q|^{1/r'} (∫_Q w^r)^{1/r}."""
    cell = float(geo.cell_measure)
    vol = float(geo.measure(Q))
    rp = r / (r - 1)
    return vol ** (1.0 / rp) * (float((w[geo.leaf_slice(Q)] ** r).sum()) * cell) ** (1.0 / r)


def polynomial_sharp_maximal(f: GridFunction, m: int, Q: DyadicCube | None = None) -> np.ndarray:
    """sup over dyadic R ∋ x inside Q of ⟨|f - P_R f|⟩_R, on the leaves of Q."""
    geo = f.geometry
    Q = Q or geo.root
    fam = PoincareFamily(f, m)
    out = np.zeros(geo.shape)
    for k in range(Q.gen, geo.L + 1):
        b = 1 << (geo.L - k)
        np.maximum(out, upsample(fam.mean_residual(k), b), out=out)
    return out[geo.leaf_slice(Q)]


def verify_self_improve(f: GridFunction, a: SmallnessFunctional | None, Q: DyadicCube | None = None, m: int = 0,
                        norm: str = "weighted", w: Weight | None = None, p: float = 1.0, s: float = 1.0,
                        r: float = 2.0, mode: str = "pointwise", phi: Callable[[float], float] | None = None
                        ) -> SelfImproveReport:
    """Check ‖(f - P_Q f)χ_Q‖_{X_Q} ≤ c·a(Q)·Σ_k φ(2^{-k}) along the constructed ½-sparse family.

    ``norm="weighted"``: X_Q is the w-weighted L^p average and φ(t) = ‖a‖ t^{1/s}
    with ‖a‖ the exact SD_p^s(w) norm. ``norm="ratio"``: the ratio norm with
    M^♯_m f in the denominator, a(Q) = ⟨|f - P_Q f|⟩_Q and φ(t) = t^{1/(p r')}.
    ``mode="MQ"`` puts M_Q(f - P_Q f) on the left.
    """
    geo = f.geometry
    Q = Q or geo.root
    fam = PoincareFamily(f, m, mode)
    if norm == "ratio":
        a = SmallnessFunctional.oscillation(f, m)
    if a is None:
        raise ValueError("a smallness functional is required")
    # starting hypothesis ⟨|f - P_R f|⟩_R ≤ a(R) on every R ∈ D(Q)
    vacuous = False
    for k in range(Q.gen, geo.L + 1):
        s_ = 1 << (k - Q.gen)
        sub = tuple(slice(i * s_, (i + 1) * s_) for i in Q.index)
        if (fam.mean_residual(k)[sub] > a.level(k)[sub] * (1 + 1e-12) + 1e-300).any():
            vacuous = True
            break
    rep = build_sparse_pointwise(fam, Q, Fraction(1, 2))
    coeffs = {P: a(P) for P in rep.family.cubes()}
    g = np.abs(fam.eval_f(Q))
    prop_constant = float(safe_ratio(g, coefficient_sum(geo, Q, coeffs)).max())
    wv = w.function.values if w is not None else np.ones(geo.shape)
    cell = float(geo.cell_measure)
    wQ = wv[geo.leaf_slice(Q)]
    gens = [gen for gen in rep.family.base.generations if gen]
    vol_Q = float(geo.measure(Q))
    occupied = [sum(float(geo.measure(c)) for c in gen) / vol_Q for gen in gens]
    extra: dict = {}
    checks: dict = {}
    if norm == "weighted":
        sm = smallness_norm(a, w, p, s, Q)
        nrm = max(sm.value, 1.0)
        phi = phi or (lambda t: nrm * t ** (1.0 / s))
        lhs = (float((g**p * wQ).sum()) * cell / (float(wQ.sum()) * cell)) ** (1.0 / p)
        factor = (s + 1) * nrm
        extra["smallness_witness"] = sm.witness.address if sm.witness else None
    elif norm == "ratio":
        sharp = polynomial_sharp_maximal(f, m, Q)
        nrm = None
        phi = phi or (lambda t: t ** (1.0 / (p * r / (r - 1))))
        ratio = safe_ratio(g, sharp)
        lhs = (float((ratio**p * wQ).sum()) * cell / w_r(geo, Q, wv, r)) ** (1.0 / p)
        factor = p * r / (r - 1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    sum_phi = math.fsum(phi(2.0 ** (-k)) for k in range(len(gens)))
    aQ = a(Q) if norm == "weighted" else 1.0
    rhs = prop_constant * aQ * sum_phi
    checks["lhs_le_rhs"] = lhs <= rhs * (1 + 1e-9) + 1e-300
    checks["sparse_half"] = all(occ <= 2.0 ** (-k) + 1e-15 for k, occ in enumerate(occupied))
    if norm == "weighted":
        # Σ_k φ(2^{-k}) ≤ φ(1) + (1/ln 2)∫_0^1 φ dt/t ≤ (s+1)‖a‖/ln 2
        checks["geometric_sum"] = sum_phi <= factor / math.log(2) * (1 + 1e-12)
        extra["rhs_sd"] = prop_constant / math.log(2) * aQ * factor
        checks["lhs_le_rhs_sd"] = lhs <= extra["rhs_sd"] * (1 + 1e-9) + 1e-300
    else:
        checks["scales_like_pr'"] = sum_phi <= (1 / math.log(2) + 1) * factor * (1 + 1e-12)
    extra["engine_constant"] = rep.empirical_constant
    extra["occupied_fractions"] = occupied
    return SelfImproveReport(f"{norm}/{mode}", lhs, rhs, sum_phi, factor, prop_constant, a(Q), nrm,
                             vacuous, checks, extra)
