"""File formats: grids, measures, weights, half-space data, coefficients.

Every file is one JSON object with a ``format`` tag, the geometry (n, L,
side, origin) and the payload. Arrays are row-major; with
``encoding = "f64le"`` the payload is base64 of little-endian float64, else
a JSON list. Writers sort keys and use repr floats, so equal data gives equal
bytes.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .dyadic import DyadicCube, RootGeometry
from .dyadic_sums import CubeCoefficients
from .gridfn import DiscreteMeasure, GridFunction, Weight
from .tent import PAD, HalfSpaceFunction

FORMATS = ("grid", "measure", "weight", "halfspace", "coefficients")


def _encode(a: np.ndarray, encoding: str):
    flat = np.ascontiguousarray(a, dtype="<f8").ravel()
    if encoding == "json":
        return [float(x) for x in flat]
    if encoding == "f64le":
        return base64.b64encode(flat.tobytes()).decode("ascii")
    raise ValueError(f"unknown encoding {encoding!r}")


def _decode(payload, encoding: str, size: int) -> np.ndarray:
    if encoding == "json":
        a = np.asarray(payload, dtype=float)
    elif encoding == "f64le":
        a = np.frombuffer(base64.b64decode(payload), dtype="<f8").astype(float)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    if a.size != size:
        raise ValueError(f"expected {size} values, got {a.size}")
    return a


def _header(kind: str, geo: RootGeometry, encoding: str) -> dict:
    d = {"format": f"sparsedom-{kind}/1", "encoding": encoding}
    d.update(geo.to_dict())
    return d


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def to_document(obj, encoding: str = "json") -> dict:
    if isinstance(obj, HalfSpaceFunction):
        d = _header("halfspace", obj.geometry, encoding)
        d["bands"] = obj.geometry.L
        d["pad"] = PAD
        d["values"] = [_encode(obj.values[..., j], encoding) for j in range(obj.geometry.L)]
        return d
    if isinstance(obj, CubeCoefficients):
        d = _header("coefficients", obj.geometry, "json")
        d["root"] = obj.root.address
        d["coefficients"] = obj.to_json()
        return d
    kinds = {GridFunction: ("grid", "values"), DiscreteMeasure: ("measure", "masses"), Weight: ("weight", "values")}
    for cls, (kind, attr) in kinds.items():
        if isinstance(obj, cls):
            inner = obj.function if isinstance(obj, Weight) else obj
            d = _header(kind, inner.geometry, encoding)
            d["values"] = _encode(getattr(inner, attr), encoding)
            return d
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def from_document(d: dict):
    fmt = d.get("format", "")
    if not fmt.startswith("sparsedom-") or not fmt.endswith("/1"):
        raise ValueError(f"unknown format tag {fmt!r}")
    kind = fmt[len("sparsedom-"):-2]
    geo = RootGeometry.from_dict(d)
    enc = d.get("encoding", "json")
    if kind == "halfspace":
        if d.get("bands") != geo.L:
            raise ValueError("band count must equal L")
        N = PAD * geo.cells_per_axis
        bands = [_decode(v, enc, N**geo.n).reshape((N,) * geo.n) for v in d["values"]]
        return HalfSpaceFunction(geo, np.stack(bands, axis=-1))
    if kind == "coefficients":
        root = DyadicCube.parse(d["root"]) if "root" in d else None
        return CubeCoefficients.from_json(geo, d["coefficients"], root)
    if kind in ("grid", "measure", "weight"):
        vals = _decode(d["values"], enc, geo.num_leaves).reshape(geo.shape)
        if kind == "grid":
            return GridFunction(geo, vals)
        if kind == "measure":
            return DiscreteMeasure(geo, vals)
        return Weight(GridFunction(geo, vals))
    raise ValueError(f"unknown format tag {fmt!r}")


def save(path, obj, encoding: str = "json") -> Path:
    p = Path(path)
    p.write_text(dumps(to_document(obj, encoding)), encoding="utf-8")
    return p


def load(path):
    return from_document(json.loads(Path(path).read_text(encoding="utf-8")))
