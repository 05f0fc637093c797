"""Good-λ curves and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

COLUMNS = ("lambda", "gamma_or_eps", "bad_measure", "superlevel_measure", "ratio", "overlap_min")


@dataclass(frozen=True)
class CurveRow:
    lam: float
    gamma_or_eps: float
    bad_measure: float
    superlevel_measure: float
    ratio: float
    overlap_min: int | None

    def cells(self) -> list[str]:
        return [_fmt(self.lam), _fmt(self.gamma_or_eps), _fmt(self.bad_measure),
                _fmt(self.superlevel_measure), _fmt(self.ratio),
                "" if self.overlap_min is None else str(self.overlap_min)]


@dataclass
class GoodLambdaCurve:
    rows: list[CurveRow] = field(default_factory=list)
    certificate_ok: bool = True
    c_engine: float | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        nonempty = [r for r in self.rows if r.bad_measure > 0]
        return {
            "rows": len(self.rows),
            "nonempty_bad_sets": len(nonempty),
            "certificate_ok": self.certificate_ok,
            "c_engine": self.c_engine,
            "max_ratio": max((r.ratio for r in self.rows), default=0.0),
            "extra": {k: self.extra[k] for k in sorted(self.extra)},
        }


def _fmt(x: float) -> str:
    # repr of a float is locale independent and round-trips exactly
    return repr(float(x))


def curve_to_csv(curve: GoodLambdaCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in curve.rows:
        w.writerow(r.cells())
    return buf.getvalue()


def curve_from_csv(text: str) -> list[CurveRow]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ValueError("unexpected curve header")
    out = []
    for r in rows[1:]:
        out.append(CurveRow(float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                            None if r[5] == "" else int(r[5])))
    return out
