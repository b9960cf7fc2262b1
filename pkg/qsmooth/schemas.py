from __future__ import annotations

import enum
import math
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = 1


class ClassParams(BaseModel):
    r: float = Field(..., description="Scale of the class; members live in [-4r, 4r]")
    s: int = Field(default=1, description="Number of summands in a B_{r,s} convolution")
    c1: float = Field(..., description="Variance constant: members need Var >= c1 (r/2)^2")

    @field_validator("r")
    @classmethod
    def validate_r(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("Class scale r must be positive.")
        return value

    @field_validator("s")
    @classmethod
    def validate_s(cls, value: int) -> int:
        if value < 1:
            raise ValueError("Class summand count s must be at least 1.")
        return value

    @field_validator("c1")
    @classmethod
    def validate_c1(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("Variance constant c1 must lie in (0, 1).")
        return value


class ClassCheck(BaseModel):
    passed: bool
    mean: float
    variance: float
    support_min: float
    support_max: float
    violations: List[str] = Field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


class HalfOpenInterval(BaseModel):
    """Interval (lo, hi]."""

    lo: float
    hi: float

    @model_validator(mode="after")
    def validate_order(self):
        if self.lo > self.hi:
            raise ValueError(f"Interval lower end {self.lo} exceeds upper end {self.hi}.")
        return self

    @property
    def length(self) -> float:
        return self.hi - self.lo


class GridSpec(BaseModel):
    lo: float = Field(default=-3.0, description="Left end of the uniform grid on the normalized scale")
    hi: float = Field(default=5.0, description="Right end of the uniform grid")
    step: float = Field(default=0.005, description="Grid spacing")

    @field_validator("step")
    @classmethod
    def validate_step(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("Grid step must be positive.")
        return value

    @model_validator(mode="after")
    def validate_bounds(self):
        if not self.lo < self.hi:
            raise ValueError("Grid lower end must be below its upper end.")
        ratio = self.lo / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("Grid lower end must be a multiple of the step.")
        return self

    @property
    def size(self) -> int:
        return int(round((self.hi - self.lo) / self.step)) + 1

    @property
    def origin_index(self) -> int:
        """Index of x = 0 on the grid."""
        return int(round(-self.lo / self.step))

    def points(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.size, dtype=np.float64)


class DensityMethod(str, enum.Enum):
    MC_KDE = "mc_kde"
    FIXED_POINT = "fixed_point"
    EXACT_KDE = "exact_kde"


class DensityMeta(BaseModel):
    n: Optional[int] = None
    iterations: Optional[int] = None
    samples: Optional[int] = None
    nodes: Optional[int] = None
    bandwidth: float = 0.0
    seed: Optional[int] = None
    grid_extended: bool = False


class SemiLocalReport(BaseModel):
    n: int
    delta_n: float
    sup_deviation: float
    C_used: float
    m: float
    stride: int
    worst_interval: Optional[HalfOpenInterval] = None

    @model_validator(mode="after")
    def validate_delta(self):
        expected = 2.0 * self.C_used * self.n ** (-1.0 / 6.0)
        if not math.isclose(self.delta_n, expected, rel_tol=1e-12):
            raise ValueError("delta_n must equal 2 C_used n^(-1/6).")
        return self


class DensityBoundsReport(BaseModel):
    sup_value: float
    max_slope: float
    sup_limit: float
    slope_limit: float
    passed: bool
    violations: List[str] = Field(default_factory=list)


class SmoothingStatement(BaseModel):
    n: int = Field(..., ge=1)
    m: float = Field(..., ge=1, description="Interval length on the raw lattice scale")
    eps: float = Field(..., gt=0)
    gamma: float = Field(..., ge=1, description="Upper density constant; at least 1")


class SmoothingReport(BaseModel):
    n: int
    m: float
    stride: int
    measured_eps: float
    measured_gamma: float
    certified_slack: float = Field(
        ..., description="Interior allowance from the slope bound, reported beside measured_eps"
    )
    worst_interval_i: HalfOpenInterval
    worst_interval_ii: HalfOpenInterval
    target: Optional[SmoothingStatement] = None
    holds: Optional[bool] = None

    @model_validator(mode="after")
    def derive_holds(self):
        if self.target is not None:
            self.holds = (
                self.measured_eps <= self.target.eps
                and self.measured_gamma <= self.target.gamma
            )
        return self


class PreconditionWarning(BaseModel):
    clause: str
    detail: str


class EtaBound(BaseModel):
    value: float
    terms: Dict[str, float]
    dominant: str
    warnings: List[PreconditionWarning] = Field(default_factory=list)


class ScheduleRound(BaseModel):
    k: int
    m: float
    ell: float
    r: float
    lam: float
    eta: float
    eps: float
    gamma: float
    lambda_m_over_sqrt_rn: float
    r_over_ell: float


class ScheduleParams(BaseModel):
    n: int
    K: int
    C_start: float
    C_hat: float
    rounds: List[ScheduleRound]
    eta_sum: float = Field(..., description="Sum of eta_j over j < K")
    final_eps: float
    final_gamma: float


class SoftRound(BaseModel):
    i: int
    omega: float
    m: float
    ell: float
    r: float
    lam: float
    m_over_sqrt_rn: float
    r_over_ell: float


class SoftStart(BaseModel):
    n: int
    delta: float
    modulus: float
    m0: float
    eps0: float
    gamma0: float
    omega0: float


class TiltRatioReport(BaseModel):
    ratio: float
    deviation: float
    r_over_ell: float
    lambda_m_term: float
    bound: float
    passed: bool
    warnings: List[PreconditionWarning] = Field(default_factory=list)


class TailBoundReport(BaseModel):
    t: float
    ell: float
    measured: float
    bound: float
    passed: bool


class BerryEsseenReport(BaseModel):
    sup_dist: float
    bound: float
    rho: float
    sigma: float
    passed: bool


class AzumaChainReport(BaseModel):
    n: int
    r: int
    t0: int
    hoeffding_term: float
    azuma_term: float
    total: float
    target: float
    passed: bool


class LltRow(BaseModel):
    n: int
    sup_deviation: float
    included: bool


class VerificationReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    target: str
    passed: bool
    measured: Dict[str, float] = Field(default_factory=dict)
    bound: Dict[str, float] = Field(default_factory=dict)
    details: Dict[str, Any] = Field(default_factory=dict)


class FittedConstants(BaseModel):
    """Implicit constants pinned from pilot runs; see qsmooth/scripts/fit_constants.py."""

    schema_version: int = SCHEMA_VERSION
    c1: float = Field(..., gt=0, lt=1)
    c2: Optional[float] = Field(default=None, description="Defaults to c1/6 when unset")
    r0: int = Field(default=20, ge=2)
    binomial_c: float = Field(default=0.04, gt=0)
    binomial_c_max: float = Field(default=0.25, gt=0)
    binomial_n0: int = Field(default=3, ge=3)
    tail_C: float = Field(default=10.0, gt=0)
    tail_c: float = Field(default=1.0 / 32.0, gt=0)
    tilt_ratio_constant: float = Field(default=10.0, gt=0)
    tilt_K: float = Field(default=4.0, gt=0)
    tilt_C_prime: float = Field(default=2.0, gt=0)
    berry_esseen_A: float = Field(default=0.56, gt=0)
    semi_local_C: float = Field(default=1.0, gt=0)
    schedule_C_start: float = Field(default=1.0, gt=0)
    schedule_C_hat: float = Field(default=0.002, gt=0)
    density_sup_limit: float = 16.0
    density_slope_limit: float = 2466.0
    bound_padding: float = Field(default=0.05, ge=0)
    gamma_target: float = 17.0
    regression_slack: float = Field(default=1.2, ge=1)
    cross_method_tol: float = Field(default=0.03, gt=0)
    small_n_cutoff: int = Field(default=16, ge=1)
    pilot_semi_local: Dict[str, float] = Field(default_factory=dict)
    pilot_llt: Dict[str, float] = Field(default_factory=dict)

    @property
    def effective_c2(self) -> float:
        return self.c2 if self.c2 is not None else self.c1 / 6.0


class OutputFormat(str, enum.Enum):
    CSV = "csv"
    JSON = "json"


class Command(str, enum.Enum):
    EXACT = "exact"
    SIMULATE = "simulate"
    DENSITY = "density"
    VERIFY = "verify"
    LLT = "llt"
    SCHEDULE = "schedule"


SAMPLING_TARGETS = {
    "medium-count-tail",
    "plain-split",
    "truncated-split",
    "binomial-split",
    "semi-local",
}


class RunConfig(BaseModel):
    command: Command
    target: Optional[str] = None
    n: Optional[int] = None
    r: Optional[int] = None
    m: Optional[float] = None
    ell: Optional[float] = None
    lam: Optional[float] = None
    seeds: Optional[int] = None
    samples: Optional[int] = None
    bandwidth: Optional[float] = None
    seed: Optional[int] = Field(default=None, ge=0)
    threads: int = Field(default=1, ge=1)
    constants_file: Optional[str] = None
    output: Optional[str] = None
    format: OutputFormat = OutputFormat.JSON

    @property
    def is_statistical(self) -> bool:
        if self.command in (Command.SIMULATE, Command.DENSITY, Command.LLT):
            return True
        return self.command == Command.VERIFY and self.target in SAMPLING_TARGETS

    @model_validator(mode="after")
    def require_seed(self):
        if self.is_statistical and self.seed is None:
            raise ValueError(
                f"Command '{self.command.value}' draws random samples and needs an explicit --seed."
            )
        return self
