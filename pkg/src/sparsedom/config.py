"""Experiment configuration. Unknown keys are rejected; domains are checked before any work."""
from __future__ import annotations

from fractions import Fraction
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

KINDS = ("verify-sparse", "bilinear", "ellr-check", "poincare", "tent", "square", "potential",
         "goodlambda-tent", "goodlambda-sums", "generate")
FAMILIES = ("canonical", "local-oscillation", "operator", "tent", "square", "poincare", "dyadic-sums")
INPUTS = ("uniform", "spiky", "smooth", "measure", "uniform-measure", "weight", "halfspace-uniform",
          "halfspace-tube", "coefficients", "file")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryConfig(_Strict):
    n: int = Field(1, ge=1, le=3)
    L: int = Field(8, ge=1, le=12)
    side: str = "1"

    @field_validator("side")
    @classmethod
    def _side(cls, v):
        if Fraction(v) <= 0:
            raise ValueError("side must be positive")
        return v


class InputConfig(_Strict):
    kind: Literal[INPUTS] = "uniform"
    atoms: int = Field(1, ge=1)
    modes: int = Field(3, ge=1)
    power: float = 0.5
    floor: float = Field(1e-3, gt=0)
    theta: float = 0.3
    spike_prob: float = Field(0.05, ge=0, le=1)
    spike: float = Field(20.0, gt=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("input kind 'file' needs a path")
        return self


class FamilyConfig(_Strict):
    kind: Literal[FAMILIES] = "canonical"
    r: float = Field(1.0, ge=1.0)
    lam: float = Field(0.25, gt=0, lt=1)
    operator: Literal["box", "dyadic-average"] = "box"
    radius: int = Field(2, ge=0)
    level: int = Field(2, ge=0)
    alpha: float = Field(3.0, gt=0)
    m: int = Field(0, ge=0, le=3)
    mode: Literal["pointwise", "MQ"] = "pointwise"


class ParamsConfig(_Strict):
    eta: str = "1/2"
    q: float = Field(2.0, gt=0)
    g: Literal["one", "random"] = "one"
    gamma: float = Field(0.5, gt=0)
    delta: float = Field(1.0, gt=0, le=1)
    epsilon: float = Field(0.5, gt=0)
    alpha: float = Field(1.0, gt=0)
    budget: Literal["exhaustive", "sampled"] = "exhaustive"
    samples: int = Field(2000, ge=1)
    lambdas: Optional[list[float]] = None
    lambda_quantiles: list[float] = Field(default_factory=lambda: [0.5, 0.8, 0.95])
    gammas: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    eps_grid: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    self_improve: bool = False
    power: float = 0.5
    encoding: Literal["json", "f64le"] = "json"

    @field_validator("eta")
    @classmethod
    def _eta(cls, v):
        e = Fraction(v)
        if not 0 < e < 1:
            raise ValueError("eta must lie in (0, 1)")
        return str(e)

    @field_validator("gammas", "eps_grid")
    @classmethod
    def _unit(cls, v):
        if not v or any(not 0 < x <= 1 for x in v):
            raise ValueError("grid values must lie in (0, 1] and the grid must be nonempty")
        return v

    @field_validator("lambda_quantiles")
    @classmethod
    def _quant(cls, v):
        if not v or any(not 0 <= x <= 1 for x in v):
            raise ValueError("quantiles must lie in [0, 1]")
        return v

    @field_validator("lambdas")
    @classmethod
    def _lams(cls, v):
        if v is not None and (not v or any(x <= 0 for x in v)):
            raise ValueError("lambdas must be positive and nonempty")
        return v


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]
    geometry: GeometryConfig = GeometryConfig()
    family: FamilyConfig = FamilyConfig()
    input: InputConfig = InputConfig()
    params: ParamsConfig = ParamsConfig()
    seeds: list[int] = Field(default_factory=lambda: [1])

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or any(not 0 <= s < 2**64 for s in v):
            raise ValueError("seeds must be a nonempty list of 64-bit unsigned integers")
        return v

    @property
    def eta(self) -> Fraction:
        return Fraction(self.params.eta)

    def family_r(self) -> float:
        fk = self.family.kind
        if fk == "tent":
            return 2.0
        if fk == "square":
            return self.params.q
        if fk == "operator":
            return self.family.r
        return 1.0

    @model_validator(mode="after")
    def _cross(self):
        k, p = self.kind, self.params
        if k == "bilinear" and not p.q > self.family_r():
            raise ValueError(f"bilinear needs q > r (q={p.q}, r={self.family_r()})")
        if k == "ellr-check" and p.budget == "exhaustive" and (self.geometry.n != 1 or self.geometry.L > 6):
            raise ValueError("exhaustive chain enumeration needs n = 1 and L <= 6")
        if k in ("square",) or self.family.kind == "square":
            if p.q < 1:
                raise ValueError("square functions need q >= 1")
        if k in ("potential",) and not p.gamma < self.geometry.n:
            raise ValueError("gamma must lie in (0, n)")
        if k in ("potential", "goodlambda-sums") and not p.delta <= min(p.q, 1.0):
            raise ValueError("delta must satisfy 0 < delta <= min(q, 1)")
        if k in ("tent", "goodlambda-tent") and not self.input.kind.startswith("halfspace") \
                and self.input.kind != "file":
            raise ValueError("tent experiments need a halfspace input")
        if k == "potential" and self.input.kind not in ("measure", "uniform-measure", "file"):
            raise ValueError("potential needs a measure input")
        size = (1 << (self.geometry.n * self.geometry.L))
        if size > 1 << 20:
            raise ValueError("grid too large")
        return self
