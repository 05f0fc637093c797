"""`sparsedom <subcommand> --config file.json [--out dir]`.

Each run writes report.json (deterministic: config echo, per-seed summaries,
aggregates, pass/fail), timing.json (wall time, kept apart so reports stay
byte-identical), and per-seed CSV files for curves and sparse coefficients.
Exit code is 0 iff every assertion passed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import inputs as gen
from . import io as fileio
from .config import ExperimentConfig
from .curves import GoodLambdaCurve, curve_to_csv
from .dyadic import RootGeometry
from .dyadic_sums import (CubeCoefficients, SumsFamily, good_lambda_sums, potential, s_and_m,
                          smallness_constant, sum_sparse)
from .engine import EngineError, build_sparse_bilinear, build_sparse_pointwise
from .family import (LocalMaximalFamily, LocalOscillationFamily, box_smoothing_operator, check_ellr,
                     dyadic_average_operator, operator_localization_family)
from .gridfn import DiscreteMeasure, GridFunction
from .poincare import PoincareFamily, SmallnessFunctional, poincare_sparse, verify_self_improve
from .rng import SplitMix64
from .square import SquareFamily, gaussian_difference, kernel_validate, square_sparse
from .tent import TentFamily, TentField, tent_good_lambda, tent_sparse, truncated_cone

log = logging.getLogger("sparsedom")


@dataclass
class SeedResult:
    seed: int
    passed: bool
    summary: dict
    constant: float | None = None
    curve: GoodLambdaCurve | None = None
    coefficients: list = field(default_factory=list)  # (address, measure, value)
    files: list = field(default_factory=list)


@dataclass
class RunReport:
    config: dict
    results: list
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def aggregate(self) -> dict:
        cs = [r.constant for r in self.results if r.constant is not None]
        return {
            "seeds": len(self.results),
            "passed_seeds": sum(r.passed for r in self.results),
            "median_constant": statistics.median(cs) if cs else None,
            "max_constant": max(cs) if cs else None,
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregate": self.aggregate(),
            "passed": self.passed,
            "runs": [{"seed": r.seed, "passed": r.passed, "summary": r.summary, "files": r.files}
                     for r in self.results],
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, Fraction):
        return str(x)
    return x


def geometry_of(cfg: ExperimentConfig) -> RootGeometry:
    g = cfg.geometry
    return RootGeometry(g.n, g.L, Fraction(g.side))


# inputs ----------------------------------------------------------------------

def generate_inputs(cfg: ExperimentConfig, seed: int):
    """The seeded input object for this config (grid, measure, weight, half-space data or coefficients)."""
    geo = geometry_of(cfg)
    spec = cfg.input
    k = spec.kind
    if k == "file":
        obj = fileio.load(spec.path)
        return obj
    if k == "uniform":
        return gen.uniform_grid(geo, seed)
    if k == "spiky":
        return gen.spiky_grid(geo, seed, spec.atoms)
    if k == "smooth":
        return gen.smooth_grid(geo, seed, spec.modes)
    if k == "measure":
        return gen.atom_measure(geo, seed, spec.atoms)
    if k == "uniform-measure":
        return gen.uniform_measure(geo)
    if k == "weight":
        return gen.power_weight(geo, seed, spec.power, spec.floor)
    if k == "halfspace-uniform":
        return gen.halfspace_uniform(geo, seed)
    if k == "halfspace-tube":
        return gen.halfspace_tube(geo, seed)
    if k == "coefficients":
        return gen.random_coefficients(geo, seed, spec.theta, spec.spike_prob, spec.spike)
    raise ValueError(f"unknown input kind {k!r}")


def _as_grid(obj) -> GridFunction:
    if isinstance(obj, GridFunction):
        return obj
    if isinstance(obj, DiscreteMeasure):
        return GridFunction(obj.geometry, obj.masses)
    raise ValueError(f"expected a grid input, got {type(obj).__name__}")


def build_family(cfg: ExperimentConfig, data):
    fc = cfg.family
    k = fc.kind
    if k == "canonical":
        return LocalMaximalFamily(_as_grid(data))
    if k == "local-oscillation":
        return LocalOscillationFamily(_as_grid(data), fc.lam)
    if k == "operator":
        f = _as_grid(data)
        T = (box_smoothing_operator(f.geometry, fc.radius) if fc.operator == "box"
             else dyadic_average_operator(f.geometry, fc.level))
        return operator_localization_family(T, fc.alpha, f, fc.r)
    if k == "tent":
        return TentFamily(data, cfg.params.alpha)
    if k == "square":
        f = _as_grid(data)
        return SquareFamily(f, cfg.params.q, gaussian_difference(f.geometry.n, cfg.params.epsilon))
    if k == "poincare":
        return PoincareFamily(_as_grid(data), fc.m, fc.mode)
    if k == "dyadic-sums":
        if not isinstance(data, CubeCoefficients):
            raise ValueError("dyadic-sums family needs a coefficients input")
        return SumsFamily(data)
    raise ValueError(f"unknown family {k!r}")


# runners ---------------------------------------------------------------------

def _engine_result(seed, rep, extra=None) -> SeedResult:
    s = rep.summary()
    if extra:
        s.update(extra)
    rows = [(a, str(m), c) for a, m, c in rep.coefficient_rows()]
    return SeedResult(seed, rep.passed, s, rep.empirical_constant, None, rows)


def run_verify(cfg, seed, data) -> SeedResult:
    fk = cfg.family.kind
    eta = cfg.eta
    if fk == "tent":
        r = tent_sparse(data, None, cfg.params.alpha, eta)
        res = _engine_result(seed, r.engine, {"tent": r.summary()})
        res.passed = r.passed
        return res
    if fk == "square":
        f = _as_grid(data)
        k = gaussian_difference(f.geometry.n, cfg.params.epsilon)
        r = square_sparse(f, None, cfg.params.q, k, eta)
        res = _engine_result(seed, r.engine, {"square": r.summary()})
        res.passed = r.passed
        return res
    if fk == "poincare":
        r = poincare_sparse(_as_grid(data), None, cfg.family.m, eta, cfg.family.mode)
        res = _engine_result(seed, r.engine, {"poincare": r.summary()})
        res.passed = r.passed
        return res
    if fk == "dyadic-sums":
        rep = sum_sparse(data, cfg.params.delta, eta)
        return _engine_result(seed, rep)
    fam = build_family(cfg, data)
    return _engine_result(seed, build_sparse_pointwise(fam, None, eta))


def run_bilinear(cfg, seed, data) -> SeedResult:
    fam = build_family(cfg, data)
    geo = fam.geometry
    if cfg.params.g == "one":
        g = np.ones(geo.shape)
    else:
        g = SplitMix64(seed).spawn(1).random(geo.num_leaves).reshape(geo.shape)
    rep = build_sparse_bilinear(fam, g, None, cfg.eta, cfg.params.q)
    return _engine_result(seed, rep)


def run_ellr(cfg, seed, data) -> SeedResult:
    fam = build_family(cfg, data)
    res = check_ellr(fam, None, None, cfg.params.budget, cfg.params.samples, seed)
    ok = res.constant <= 1 + 1e-12
    summary = {"constant": res.constant, "label": res.label, "chains_tested": res.chains_tested,
               "witness_leaf": res.witness_leaf.address if res.witness_leaf else None,
               "witness_chain": list(res.witness_chain), "checks": {"ellr_at_most_one": ok}}
    return SeedResult(seed, ok, summary, res.constant)


def run_poincare(cfg, seed, data) -> SeedResult:
    f = _as_grid(data)
    r = poincare_sparse(f, None, cfg.family.m, cfg.eta, cfg.family.mode)
    summary = r.summary()
    passed = r.passed
    if cfg.params.self_improve:
        si = verify_self_improve(f, None, None, cfg.family.m, norm="ratio", r=2.0, mode=cfg.family.mode)
        summary["self_improve_ratio"] = si.summary()
        a = SmallnessFunctional.oscillation(f, cfg.family.m)
        w = gen.power_weight(f.geometry, seed, cfg.params.power, cfg.input.floor)
        sw = verify_self_improve(f, a, None, cfg.family.m, norm="weighted", w=w, p=1.0, s=1.0,
                                 mode=cfg.family.mode)
        summary["self_improve_weighted"] = sw.summary()
        passed = passed and si.passed and sw.passed
    rows = [(P.address, str(f.geometry.measure(P)), v) for P, v in sorted(r.rhs_coefficients.items())]
    return SeedResult(seed, passed, summary, r.prop_constant, None, rows)


def run_tent(cfg, seed, data) -> SeedResult:
    r = tent_sparse(data, None, cfg.params.alpha, cfg.eta)
    geo = data.geometry
    rows = [(P.address, str(geo.measure(P)), v) for P, v in sorted(r.coefficients.items())]
    return SeedResult(seed, r.passed, r.summary(), r.theorem_constant, None, rows)


def run_square(cfg, seed, data) -> SeedResult:
    f = _as_grid(data)
    k = gaussian_difference(f.geometry.n, cfg.params.epsilon)
    kv = kernel_validate(k)
    r = square_sparse(f, None, cfg.params.q, k, cfg.eta)
    s = r.summary()
    s["kernel"] = {"ok": kv.ok, "margins": kv.margins, "violations": kv.violations}
    rows = [(P.address, str(f.geometry.measure(P)), v) for P, v in sorted(r.coefficients.items())]
    return SeedResult(seed, r.passed and kv.ok, s, r.theorem_constant, None, rows)


def _quantile_lambdas(values: np.ndarray, qs, scale: float = 0.5) -> list[float]:
    pos = values[values > 0]
    if pos.size == 0:
        return [1.0]
    lams = sorted({float(np.quantile(pos, q)) * scale for q in qs})
    return [x for x in lams if x > 0] or [1.0]


def run_potential(cfg, seed, data) -> SeedResult:
    p = cfg.params
    if not isinstance(data, DiscreteMeasure):
        raise ValueError("potential needs a measure input")
    T, M, alpha = potential(data, p.q, p.gamma)
    C = smallness_constant(alpha, p.delta)
    summary = {"smallness_constant": C, "T_max": float(T.values.max()), "M_max": float(M.values.max())}
    passed = True
    rows = []
    if np.isfinite(C) and (alpha.levels[0] > 0).any():
        rep = sum_sparse(alpha.power(p.q), p.delta / p.q, cfg.eta)
        summary["sum_sparse"] = rep.summary()
        passed &= rep.passed
        rows = [(a, str(m), c) for a, m, c in rep.coefficient_rows()]
    lams = p.lambdas or _quantile_lambdas(T.values, p.lambda_quantiles)
    curve = good_lambda_sums(alpha, p.q, p.delta, lams, p.eps_grid, cfg.eta)
    summary["good_lambda"] = curve.summary()
    passed &= curve.certificate_ok
    return SeedResult(seed, bool(passed), summary, summary.get("sum_sparse", {}).get("empirical_constant"),
                      curve, rows)


def run_goodlambda_tent(cfg, seed, data) -> SeedResult:
    p = cfg.params
    tf = TentField(data)
    lams = p.lambdas or _quantile_lambdas(truncated_cone(data, p.alpha, 0, tf), p.lambda_quantiles)
    curve = tent_good_lambda(data, lams, p.gammas, p.alpha, cfg.eta, tf)
    return SeedResult(seed, curve.certificate_ok, curve.summary(), curve.c_engine, curve)


def run_goodlambda_sums(cfg, seed, data) -> SeedResult:
    p = cfg.params
    if not isinstance(data, CubeCoefficients):
        raise ValueError("goodlambda-sums needs a coefficients input")
    S, _ = s_and_m(data, p.q)
    lams = p.lambdas or _quantile_lambdas(S.values, p.lambda_quantiles)
    curve = good_lambda_sums(data, p.q, p.delta, lams, p.eps_grid, cfg.eta)
    return SeedResult(seed, curve.certificate_ok, curve.summary(), curve.c_engine, curve)


def run_generate(cfg, seed, data, out: Path) -> SeedResult:
    name = f"input_{cfg.input.kind}_{seed}.json"
    fileio.save(out / name, data, cfg.params.encoding)
    return SeedResult(seed, True, {"file": name}, files=[name])


RUNNERS = {
    "verify-sparse": run_verify,
    "bilinear": run_bilinear,
    "ellr-check": run_ellr,
    "poincare": run_poincare,
    "tent": run_tent,
    "square": run_square,
    "potential": run_potential,
    "goodlambda-tent": run_goodlambda_tent,
    "goodlambda-sums": run_goodlambda_sums,
}


def emit_curves(curve: GoodLambdaCurve, path) -> Path:
    p = Path(path)
    p.write_text(curve_to_csv(curve), encoding="utf-8")
    return p


def coefficients_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("cube", "measure", "coefficient"))
    for a, m, c in rows:
        w.writerow((a, m, repr(float(c))))
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out: Path | None = None) -> RunReport:
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results = []
    for seed in cfg.seeds:
        data = generate_inputs(cfg, seed)
        try:
            if cfg.kind == "generate":
                if out is None:
                    raise ValueError("generate needs an output directory")
                res = run_generate(cfg, seed, data, out)
            else:
                res = RUNNERS[cfg.kind](cfg, seed, data)
        except (ValueError, ArithmeticError, EngineError) as exc:
            # assertion-style failures: record and keep going so the report is complete
            log.error("seed %d failed: %s", seed, exc)
            res = SeedResult(seed, False, {"error": f"{type(exc).__name__}: {exc}"})
        if out is not None and res.curve is not None:
            name = f"curve_{seed}.csv"
            emit_curves(res.curve, out / name)
            res.files.append(name)
        if out is not None and res.coefficients:
            name = f"coefficients_{seed}.csv"
            (out / name).write_text(coefficients_csv(res.coefficients), encoding="utf-8")
            res.files.append(name)
        results.append(res)
    rep = RunReport(cfg.model_dump(mode="json"), results, time.perf_counter() - t0)
    if out is not None:
        (out / "report.json").write_text(fileio.dumps(_jsonable(rep.to_dict())), encoding="utf-8")
        (out / "timing.json").write_text(fileio.dumps({"wall_time_seconds": rep.wall_time}), encoding="utf-8")
    return rep


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsedom", description="Sparse domination experiments on dyadic grids")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in [*RUNNERS, "generate"]:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default=None, help="output directory (default: ./out/<subcommand>)")
        if kind == "potential":
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--q", type=float)
            sp.add_argument("--measure", help="measure file; overrides the configured input")
            sp.add_argument("--lambda-quantiles", type=float, nargs="+")
            sp.add_argument("--eps-grid", type=float, nargs="+")
    return ap


def load_config(path, command: str, overrides: dict | None = None) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    raw.setdefault("kind", command)
    if raw["kind"] != command:
        raise ValueError(f"config kind {raw['kind']!r} does not match subcommand {command!r}")
    for section, key, val in (overrides or {}).get("items", []):
        raw.setdefault(section, {})[key] = val
    return ExperimentConfig.model_validate(raw)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    items = []
    if args.command == "potential":
        for key, val in (("gamma", args.gamma), ("q", args.q), ("lambda_quantiles", args.lambda_quantiles),
                         ("eps_grid", args.eps_grid)):
            if val is not None:
                items.append(("params", key, val))
        if args.measure:
            items += [("input", "kind", "file"), ("input", "path", args.measure)]
    try:
        cfg = load_config(args.config, args.command, {"items": items})
    except (ValueError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("out") / args.command
    rep = run_experiment(cfg, out)
    agg = rep.aggregate()
    print(f"{args.command}: {agg['passed_seeds']}/{agg['seeds']} seeds passed; report in {out / 'report.json'}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
