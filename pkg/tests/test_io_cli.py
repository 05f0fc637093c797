from __future__ import annotations

import json
import math

import numpy as np
import pytest
from _configs import CONFIGS, command_of
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from sparsedom import io as fileio
from sparsedom.cli import generate_inputs, main, run_experiment
from sparsedom.config import ExperimentConfig
from sparsedom.curves import COLUMNS, CurveRow, GoodLambdaCurve, curve_from_csv, curve_to_csv
from sparsedom.dyadic import RootGeometry
from sparsedom.dyadic_sums import CubeCoefficients
from sparsedom.gridfn import DiscreteMeasure, Weight
from sparsedom.inputs import (atom_measure, halfspace_tube, power_weight, random_coefficients, smooth_grid,
                              spiky_grid, uniform_grid)
from sparsedom.tent import HalfSpaceFunction

seeds = st.integers(0, 2**64 - 1)


def _same(a, b):
    if isinstance(a, CubeCoefficients):
        return a.root == b.root and all((x == y).all() for x, y in zip(a.levels, b.levels))
    if isinstance(a, Weight):
        a, b = a.function, b.function
    va = a.masses if isinstance(a, DiscreteMeasure) else a.values
    vb = b.masses if isinstance(b, DiscreteMeasure) else b.values
    return type(a) is type(b) and a.geometry == b.geometry and np.array_equal(va, vb)


@pytest.mark.parametrize("encoding", ["json", "f64le"])
@pytest.mark.parametrize("make", [
    lambda g: uniform_grid(g, 3), lambda g: atom_measure(g, 3, 2), lambda g: power_weight(g, 3),
    lambda g: halfspace_tube(g, 3), lambda g: random_coefficients(g, 3),
])
def test_file_round_trip(tmp_path, encoding, make):
    geo = RootGeometry(2, 2)
    obj = make(geo)
    p = fileio.save(tmp_path / "x.json", obj, encoding)
    back = fileio.load(p)
    assert _same(obj, back)
    # writing again gives the same bytes
    assert fileio.dumps(fileio.to_document(back, encoding)) == p.read_text()


def test_file_rejects_bad_documents():
    geo = RootGeometry(1, 2)
    d = fileio.to_document(uniform_grid(geo, 1))
    with pytest.raises(ValueError):
        fileio.from_document({**d, "format": "other/1"})
    with pytest.raises(ValueError):
        fileio.from_document({**d, "values": d["values"][:-1]})
    h = fileio.to_document(HalfSpaceFunction.zeros(geo))
    with pytest.raises(ValueError):
        fileio.from_document({**h, "bands": 3})
    with pytest.raises(TypeError):
        fileio.to_document(object())


def test_curve_csv_round_trip():
    c = GoodLambdaCurve([CurveRow(0.1, 0.25, 0.0, 0.5, 0.0, None), CurveRow(1 / 3, 1.0, 0.125, 0.5, 0.25, 4)])
    text = curve_to_csv(c)
    assert text.splitlines()[0] == ",".join(COLUMNS)
    assert curve_from_csv(text) == c.rows
    empty = curve_to_csv(GoodLambdaCurve())
    assert empty == ",".join(COLUMNS) + "\n" and curve_from_csv(empty) == []
    with pytest.raises(ValueError):
        curve_from_csv("a,b\n")


@given(seeds, st.integers(1, 4))
def test_spiky_reproducible(seed, atoms):
    geo = RootGeometry(1, 5)
    a, b = spiky_grid(geo, seed, atoms), spiky_grid(geo, seed, atoms)
    assert np.array_equal(a.values, b.values)
    assert 1 <= np.count_nonzero(a.values) <= atoms
    assert np.array_equal(smooth_grid(geo, seed).values, smooth_grid(geo, seed).values)


def test_generators_depend_on_seed():
    geo = RootGeometry(1, 5)
    assert not np.array_equal(uniform_grid(geo, 1).values, uniform_grid(geo, 2).values)


def _write(tmp_path, name):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(CONFIGS[name]))
    return cfg


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_cli_runs_and_is_deterministic(tmp_path, name):
    cfg = _write(tmp_path, name)
    cmd = command_of(name)
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main([cmd, "--config", str(cfg), "--out", str(o)]) for o in outs]
    assert codes == [0, 0]
    files = sorted(p.name for p in outs[0].iterdir())
    assert "report.json" in files and "timing.json" in files
    assert files == sorted(p.name for p in outs[1].iterdir())
    for f in files:
        if f != "timing.json":
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    rep = json.loads((outs[0] / "report.json").read_text())
    assert rep["passed"] is True
    assert rep["config"]["kind"] == cmd


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"family": {"kind": "operator", "r": 2}, "params": {"q": 2}}))
    assert main(["bilinear", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "q > r" in capsys.readouterr().err
    unknown = tmp_path / "u.json"
    unknown.write_text(json.dumps({"params": {"qq": 1}}))
    assert main(["tent", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 2
    wrong = tmp_path / "w.json"
    wrong.write_text(json.dumps({"kind": "tent"}))
    assert main(["square", "--config", str(wrong), "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("raw", [
    {"kind": "bilinear", "family": {"kind": "canonical"}, "params": {"q": 1}},
    {"kind": "ellr-check", "geometry": {"n": 2, "L": 3}},
    {"kind": "ellr-check", "geometry": {"n": 1, "L": 7}},
    {"kind": "potential", "input": {"kind": "measure"}, "params": {"gamma": 1.0}},
    {"kind": "potential", "input": {"kind": "measure"}, "params": {"q": 0.5, "delta": 0.75}},
    {"kind": "tent", "input": {"kind": "uniform"}},
    {"kind": "potential", "input": {"kind": "uniform"}},
    {"kind": "square", "params": {"q": 0.5}},
    {"kind": "verify-sparse", "params": {"eta": "1"}},
    {"kind": "verify-sparse", "seeds": []},
    {"kind": "verify-sparse", "input": {"kind": "file"}},
    {"kind": "verify-sparse", "geometry": {"n": 3, "L": 8}},
    {"kind": "nope"},
])
def test_config_validation(raw):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(raw)


def test_potential_flags_and_measure_file(tmp_path):
    geo = RootGeometry(1, 6)
    mpath = fileio.save(tmp_path / "mu.json", atom_measure(geo, 9))
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"geometry": {"n": 1, "L": 6}, "input": {"kind": "measure"}}))
    out = tmp_path / "o"
    code = main(["potential", "--config", str(cfg), "--out", str(out), "--gamma", "0.25", "--q", "2",
                 "--measure", str(mpath), "--lambda-quantiles", "0.5", "--eps-grid", "0.5", "1"])
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["params"]["gamma"] == 0.25
    assert rep["config"]["input"]["path"] == str(mpath)


def test_generate_writes_loadable_input(tmp_path):
    cfg = ExperimentConfig.model_validate(CONFIGS["generate"] | {"kind": "generate"})
    rep = run_experiment(cfg, tmp_path)
    (name,) = rep.results[0].files
    back = fileio.load(tmp_path / name)
    assert _same(back, generate_inputs(cfg, 1))


def test_failure_is_recorded_not_raised(tmp_path):
    """An input the runner rejects becomes a failed seed with exit code 1."""
    geo = RootGeometry(1, 3)
    path = fileio.save(tmp_path / "g.json", uniform_grid(geo, 1))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"geometry": {"n": 1, "L": 3}, "input": {"kind": "file", "path": str(path)},
                               "params": {"q": 1}}))
    assert main(["goodlambda-sums", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["passed"] is False and "error" in rep["runs"][0]["summary"]


def test_report_aggregates():
    cfg = ExperimentConfig.model_validate(CONFIGS["verify-sparse"] | {"kind": "verify-sparse"})
    rep = run_experiment(cfg)
    agg = rep.aggregate()
    assert agg["seeds"] == 2 and agg["passed_seeds"] == 2
    assert agg["max_constant"] >= agg["median_constant"] >= 0
    assert all(math.isfinite(r.constant) for r in rep.results)
