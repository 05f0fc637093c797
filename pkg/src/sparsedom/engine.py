"""Stopping-time construction of sparse families and verification of the domination bounds."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._blocks import block_reduce, upsample
from .dyadic import (ContractingFamily, DyadicCube, RootGeometry, SparseFamily,
                     overlap_distribution, validate_contracting, validate_eta_sparse)
from .family import CubeFamily
from .gridfn import GridFunction, quantile_desc

RTOL = 1e-9


class EngineError(RuntimeError):
    """An assertion of the construction failed; carries the offending cube."""


@dataclass(frozen=True)
class CZResult:
    parent: DyadicCube
    selected: tuple[DyadicCube, ...]
    omega_measure: Fraction
    omega_count: int
    bounds_ok: tuple[bool, ...]
    packing_ok: bool
    covered: bool
    covered_mask: np.ndarray = field(repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return all(self.bounds_ok) and self.packing_ok and self.covered


def cz_decompose(geometry: RootGeometry, P: DyadicCube, omega: np.ndarray, height=None) -> CZResult:
    """Maximal strict subcubes R of P with |R ∩ Ω| > height·|R|, selected top-down.

    ``omega`` is a boolean array over the leaves of P. Default height 1/2^{n+1}.
    """
    n = geometry.n
    height = Fraction(1, 2 ** (n + 1)) if height is None else Fraction(height)
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != geometry.local_shape(P):
        raise ValueError("omega must be a leaf mask of P")
    total = int(omega.sum())
    size_P = geometry.leaves_in(P)
    if total > height * size_P:
        raise ValueError("precondition violated: |Ω| exceeds height·|P|")
    depth = geometry.L - P.gen
    num, den = height.numerator, height.denominator
    omega_i = omega.astype(np.int64)
    covered = np.zeros((1,) * n, dtype=bool)
    selected: list[DyadicCube] = []
    bounds: list[bool] = []
    upper = min(Fraction(1), 2**n * height)
    for g in range(1, depth + 1):
        b = 1 << (depth - g)
        size = b**n
        counts = block_reduce(omega_i, b, "sum")
        covered = upsample(covered, 2)
        sel = (counts * den > num * size) & ~covered
        for idx in np.argwhere(sel):
            cube = DyadicCube(P.gen + g, tuple(int(p * (1 << g) + i) for p, i in zip(P.index, idx)))
            c = int(counts[tuple(idx)])
            bounds.append(height * size <= c <= upper * size)
            selected.append(cube)
        covered = covered | sel
    covered_leaves = covered if depth > 0 else np.zeros_like(omega)
    covered_ok = bool(not (omega & ~covered_leaves).any())
    sel_leaves = sum(geometry.leaves_in(c) for c in selected)
    packing_ok = sel_leaves * height <= total
    cell = geometry.cell_measure
    return CZResult(P, tuple(sorted(selected)), total * cell, total, tuple(bounds),
                    bool(packing_ok), covered_ok, covered_leaves)


@dataclass
class CubeStats:
    cube: DyadicCube
    a1: float
    a2: float
    omega_count: int
    omega_ok: bool
    ep_ok: bool
    cz: CZResult

    @property
    def gamma(self) -> float:
        return self.a1 + self.a2


@dataclass
class DominationReport:
    mode: str
    family: SparseFamily
    coefficients: dict
    stats: dict
    empirical_constant: float
    paper_bound: float
    witness: DyadicCube | None
    lhs_at_witness: float
    rhs_at_witness: float
    checks: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def coefficient_rows(self):
        geo = self.family.geometry
        for P in self.family.cubes():
            yield P.address, geo.measure(P), self.coefficients[P]

    def summary(self) -> dict:
        """JSON-friendly digest (deterministic key order)."""
        return {
            "mode": self.mode,
            "eta": str(self.family.eta),
            "root": self.family.root.address,
            "family_size": len(self.family.base),
            "generations": len(self.family.base.generations),
            "empirical_constant": self.empirical_constant,
            "paper_bound": self.paper_bound,
            "witness": self.witness.address if self.witness else None,
            "lhs_at_witness": self.lhs_at_witness,
            "rhs_at_witness": self.rhs_at_witness,
            "checks": dict(sorted(self.checks.items())),
            "extra": {k: self.extra[k] for k in sorted(self.extra)},
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d["family"] = self.family.base.to_json()
        d["coefficients"] = [[a, str(m), c] for a, m, c in self.coefficient_rows()]
        return d


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SPARSEDOM_THREADS", "1")))
    except ValueError:
        return 1


def _process(fam: CubeFamily, P: DyadicCube, eta: Fraction, mode) -> CubeStats:
    geo = fam.geometry
    n = geo.n
    sl = geo.leaf_slice(P)
    fP = np.abs(fam.f_tiles(P.gen)[sl])
    ms = fam.sharp_tiles(P.gen, mode)[sl]
    if not (np.isfinite(fP).all() and np.isfinite(ms).all()):
        raise EngineError(f"non-finite evaluation on {P.address}")
    M = geo.leaves_in(P)
    t_cells = (1 - eta) / 2 ** (n + 2) * M
    a1 = quantile_desc(fP, t_cells)
    a2 = quantile_desc(ms, t_cells)
    om = (fP > a1) | (ms > a2)
    cnt = int(om.sum())
    omega_ok = cnt <= (1 - eta) / 2 ** (n + 1) * M
    if not omega_ok:
        raise EngineError(f"|Ω(P)| too large on {P.address}")
    cz = cz_decompose(geo, P, om)
    if not cz.ok:
        raise EngineError(f"Calderón–Zygmund bounds fail on {P.address}")
    ep_ok = bool((fP[~cz.covered_mask] <= a1).all())
    return CubeStats(P, a1, a2, cnt, omega_ok, ep_ok, cz)


def construct_family(fam: CubeFamily, Q: DyadicCube, eta, mode="sup"):
    """Run the stopping time from Q. Returns (certified SparseFamily, stats per cube)."""
    eta = Fraction(eta)
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    gens = [(Q,)]
    stats: dict = {}
    workers = _workers()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while gens[-1]:
            cur = gens[-1]
            if pool is not None and len(cur) > 1:
                results = list(pool.map(lambda P: _process(fam, P, eta, mode), cur))
            else:
                results = [_process(fam, P, eta, mode) for P in cur]
            nxt = []
            for s in results:
                stats[s.cube] = s
                nxt.extend(s.cz.selected)
            gens.append(tuple(sorted(nxt)))
    finally:
        if pool is not None:
            pool.shutdown()
    base = ContractingFamily(fam.geometry, tuple(gens))
    sf = validate_eta_sparse(base, eta)
    if not isinstance(sf, SparseFamily):
        raise EngineError(f"constructed family is not {eta}-sparse: {sf}")
    return sf, stats


def coefficient_sum(geometry: RootGeometry, Q: DyadicCube, coeffs: dict, power: float = 1.0) -> np.ndarray:
    """Σ_P c_P^power χ_P over the leaves of Q."""
    out = np.zeros(geometry.local_shape(Q))
    for P in sorted(coeffs):
        out[geometry.leaf_slice(P, Q)] += coeffs[P] ** power
    return out


def safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with 0/0 = 0 and x/0 = inf for x > 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))


def pointwise_ratio(geometry, Q, lhs, coeffs, r, C_r):
    rhs = C_r * coefficient_sum(geometry, Q, coeffs, r) ** (1.0 / r)
    ratio = safe_ratio(lhs, rhs)
    i = int(np.argmax(ratio))
    return float(ratio.flat[i]), geometry.leaf_cube(i, Q), float(lhs.flat[i]), float(rhs.flat[i])


def build_sparse_pointwise(fam: CubeFamily, Q: DyadicCube | None = None, eta=Fraction(1, 2)) -> DominationReport:
    """Sparse family and γ_P with |f_Q| ≤ c·C_r (Σ γ_P^r χ_P)^{1/r}, c checked against 2·3^{1/r}."""
    geo = fam.geometry
    Q = Q or geo.root
    sf, stats = construct_family(fam, Q, eta, "sup")
    coeffs = {P: stats[P].gamma for P in sf.cubes()}
    lhs = np.abs(fam.eval_f(Q))
    emp, wit, lw, rw = pointwise_ratio(geo, Q, lhs, coeffs, fam.r, fam.C_r)
    bound = 2.0 * 3.0 ** (1.0 / fam.r)
    dist = overlap_distribution(sf)
    checks = {
        "sparse": True,
        "contracting": bool(validate_contracting(sf.base)),
        "omega_measure": all(s.omega_ok for s in stats.values()),
        "calderon_zygmund": all(s.cz.ok for s in stats.values()),
        "f_bounded_on_E": all(s.ep_ok for s in stats.values()),
        "overlap_distribution": dist.ok,
        "constant": emp <= bound * (1 + RTOL),
    }
    return DominationReport("pointwise", sf, coeffs, stats, emp, bound, wit, lw, rw, checks,
                            {"r": fam.r, "C_r": fam.C_r})


def build_sparse_bilinear(fam: CubeFamily, g: GridFunction | np.ndarray, Q: DyadicCube | None = None,
                          eta=Fraction(1, 2), q: float = 2.0) -> DominationReport:
    """Sparse family with the q-mean sharp maximal function; checks
    ∫_Q |f_Q|^r g ≤ c·C_r Σ α_P^r ⟨g⟩_{s,P}|P| with s = (q/r)' against c ≤ 18·4^r."""
    geo = fam.geometry
    Q = Q or geo.root
    r = fam.r
    if not q > r:
        raise ValueError("bilinear mode needs q > r")
    gv = g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float).reshape(geo.shape)
    if (gv < 0).any():
        raise ValueError("g must be nonnegative")
    s = q / (q - r)
    sf, stats = construct_family(fam, Q, eta, float(q))
    coeffs = {P: stats[P].gamma for P in sf.cubes()}
    cell = float(geo.cell_measure)
    fQ = np.abs(fam.eval_f(Q))
    lhs = float((fQ**r * gv[geo.leaf_slice(Q)]).sum()) * cell
    rhs_terms = []
    for P in sorted(coeffs):
        gP = gv[geo.leaf_slice(P)]
        avg = float(np.mean(gP**s)) ** (1.0 / s)
        rhs_terms.append(coeffs[P] ** r * avg * float(geo.measure(P)))
    rhs = fam.C_r * math.fsum(rhs_terms)
    emp = float(safe_ratio(np.array(lhs), np.array(rhs)))
    bound = 18.0 * 4.0**r
    dist = overlap_distribution(sf)
    checks = {
        "sparse": True,
        "omega_measure": all(st.omega_ok for st in stats.values()),
        "calderon_zygmund": all(st.cz.ok for st in stats.values()),
        "overlap_distribution": dist.ok,
        "constant": emp <= bound * (1 + RTOL),
    }
    return DominationReport("bilinear", sf, coeffs, stats, emp, bound, None, lhs, rhs, checks,
                            {"r": r, "q": q, "s": s, "C_r": fam.C_r})


def toy_domination_check(fam: CubeFamily, F: ContractingFamily) -> float:
    """Max over leaves of (|f_Q|^r / Σ_k Σ_{P∈F_k} (|f_P|^r χ_{E_P} + Σ_{P'} |f_{P',P}|^r χ_{P'}))^{1/r}."""
    ok = validate_contracting(F)
    if not ok:
        raise ValueError(f"not a contracting family: {ok}")
    geo = fam.geometry
    Q = F.root
    r = fam.r
    rhs = np.zeros(geo.local_shape(Q))
    for k, gen in enumerate(F.generations):
        nxt_mask = F.omega(k + 1)
        nxt = F.generations[k + 1] if k + 1 < len(F.generations) else ()
        for P in gen:
            slP = geo.leaf_slice(P, Q)
            e = ~nxt_mask[slP]
            rhs[slP] += np.where(e, np.abs(fam.eval_f(P)) ** r, 0.0)
            for Pp in nxt:
                if P.contains(Pp):
                    rhs[geo.leaf_slice(Pp, Q)] += np.abs(fam.eval_diff(Pp, P)) ** r
    lhs = np.abs(fam.eval_f(Q)) ** r
    return float(safe_ratio(lhs, rhs).max() ** (1.0 / r))
