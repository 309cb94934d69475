"""
Pydantic models for network parameters, stage plans and analytic/simulated results
"""

import math
import hashlib
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Tolerance(BaseModel):
    """Accuracy target for series and continued-fraction evaluation"""
    model_config = ConfigDict(frozen=True)

    rel: float = Field(default=1e-10, gt=0.0, lt=1e-3, description="Relative error target")
    max_terms: int = Field(default=10_000, ge=100, description="Series length cap")


DEFAULT_TOLERANCE = Tolerance()


class NetworkConfig(BaseModel):
    """Physical-layer and density parameters (densities per km^2, distances in km, powers in mW)"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(..., alias="lambda", gt=0.0, description="Device density per km^2")
    lambda_bs: float = Field(..., gt=0.0, description="BS density per km^2")
    alpha: float = Field(..., gt=2.0, description="Path loss exponent")
    p_bar_t: float = Field(..., ge=0.0, description="Target received power in mW")
    p_t_max: float = Field(..., gt=0.0, description="Maximum transmit power in mW, may be inf")
    eta: float = Field(..., gt=0.0, le=1.0, description="PA efficiency")
    p_lo: float = Field(..., ge=0.0, description="Local oscillator power in mW")
    p_rx: float = Field(..., ge=0.0, description="Receive chain power in mW")
    p_tx: float = Field(..., ge=0.0, description="Transmit chain power in mW (excluding PA)")
    p_o: float = Field(..., ge=0.0, description="Other circuit power in mW")
    w: float = Field(default=1e5, gt=0.0, description="Bandwidth in Hz")
    m_payload: float = Field(default=100.0, gt=0.0, description="Payload per device in bits")
    n0: float = Field(default=0.0, ge=0.0, description="Noise PSD, carried but unused (interference limited)")

    @model_validator(mode="after")
    def check_densities_and_powers(self):
        if not self.lam > self.lambda_bs:
            raise ValueError("device density must exceed BS density")
        if self.p_t_max < self.p_bar_t:
            raise ValueError("p_t_max must be at least p_bar_t")
        return self

    @property
    def p_c(self) -> float:
        """Total circuit power P_TX + P_RX + P_LO + P_O"""
        return self.p_tx + self.p_rx + self.p_lo + self.p_o

    @property
    def unlimited_power(self) -> bool:
        return math.isinf(self.p_t_max)

    def updated(self, **changes) -> "NetworkConfig":
        """Validated copy with some fields replaced"""
        values = self.model_dump(by_alias=True)
        values.update({("lambda" if key == "lam" else key): value for key, value in changes.items()})
        return NetworkConfig.model_validate(values)

    def fingerprint(self) -> str:
        """Stable hash of the parameter set"""
        return hashlib.sha256(self.model_dump_json(by_alias=True).encode()).hexdigest()[:16]


class TransmissionMode(str, Enum):
    """How the K stages share time"""
    SEQUENTIAL = "sequential"
    FULL_DUPLEX = "full_duplex"
    HALF_DUPLEX = "half_duplex"


class CriticalDistance(BaseModel):
    """Range within which full channel inversion is feasible"""
    model_config = ConfigDict(frozen=True)

    r_c: float = Field(..., gt=0.0, description="Critical distance in km, inf for unlimited power")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.r_c)


class StageParams(BaseModel):
    """Derived quantities of one stage"""
    model_config = ConfigDict(frozen=True)

    k: int = Field(..., ge=1)
    lambda_u: float = Field(..., ge=0.0, description="Transmitter density")
    lambda_a: float = Field(..., gt=0.0, description="Aggregator (receiver) density")
    mean_na: float = Field(..., ge=0.0, description="Mean transmitters per aggregator")
    t_tx: float = Field(..., gt=0.0, description="Mean transmit time, stage 1 normalized to 1")


class StagePlan(BaseModel):
    """Per-stage densities, loads and transmit-time scalings for a (gamma, K) choice"""
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(..., gt=0.0, lt=0.5, description="Aggregator fraction")
    k_total: int = Field(..., ge=1, description="Total number of stages")
    lambda_u: Tuple[float, ...]
    lambda_a: Tuple[float, ...]
    mean_na: Tuple[float, ...]
    t_tx: Tuple[float, ...]
    gamma_last: float = Field(..., gt=0.0, lt=1.0, description="Effective aggregator fraction of the last stage")
    half_duplex: bool = Field(default=False, description="Built for a half-duplex round (fraction gamma^2)")

    @model_validator(mode="after")
    def check_lengths(self):
        for name in ("lambda_u", "lambda_a", "mean_na", "t_tx"):
            if len(getattr(self, name)) != self.k_total:
                raise ValueError(f"{name} must have k_total entries")
        return self

    @property
    def stages(self) -> range:
        return range(1, self.k_total + 1)

    def stage(self, k: int) -> StageParams:
        if not 1 <= k <= self.k_total:
            from .errors import DomainError
            raise DomainError(f"Stage index {k} outside 1..{self.k_total}")
        i = k - 1
        return StageParams(k=k, lambda_u=self.lambda_u[i], lambda_a=self.lambda_a[i],
                           mean_na=self.mean_na[i], t_tx=self.t_tx[i])


class EnergyBreakdown(BaseModel):
    """Per-stage and total energy density (mW x normalized time per km^2)"""
    per_stage: List[float] = Field(..., description="Energy density per stage")
    total: float = Field(..., ge=0.0)
    coverage_scaled: bool = Field(..., description="Whether P_cov(k-1) factors were applied")

    @model_validator(mode="after")
    def check_total(self):
        if any(value < 0 for value in self.per_stage):
            raise ValueError("stage energies must be nonnegative")
        if not math.isclose(self.total, math.fsum(self.per_stage), rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("total must equal the sum of stage energies")
        return self


class CoverageVector(BaseModel):
    """Entry k holds P_cov(k-1); the leading entry is 1 by convention"""
    p_cov: List[float]

    @field_validator("p_cov")
    @classmethod
    def check_range(cls, values):
        if any(not 0.0 <= value <= 1.0 for value in values):
            raise ValueError("coverage values must lie in [0, 1]")
        return values

    @classmethod
    def ones(cls, k_total: int) -> "CoverageVector":
        return cls(p_cov=[1.0] * k_total)


class SirThreshold(BaseModel):
    """SIR threshold T"""
    t: float = Field(..., gt=0.0)


class RateThreshold(BaseModel):
    """Rate threshold rho in bits per second"""
    rho: float = Field(..., gt=0.0)


class LaplaceEval(BaseModel):
    """Laplace transform of the interference evaluated at s"""
    s: float = Field(..., ge=0.0)
    value: float = Field(..., ge=0.0, le=1.0)


class StageCoverage(BaseModel):
    """Per-stage coverage and its running products"""
    per_stage: List[float]
    joint: List[float]

    @model_validator(mode="after")
    def check_products(self):
        running = 1.0
        for p, j in zip(self.per_stage, self.joint):
            running *= p
            if not math.isclose(running, j, rel_tol=1e-9, abs_tol=1e-15):
                raise ValueError("joint must be the running product of per_stage")
        return self

    @classmethod
    def from_per_stage(cls, per_stage: Sequence[float]) -> "StageCoverage":
        values = [min(max(float(p), 0.0), 1.0) for p in per_stage]
        return cls(per_stage=values, joint=list(np.cumprod(values)))

    @property
    def total(self) -> float:
        return self.joint[-1] if self.joint else 1.0


class LoadPmf(BaseModel):
    """Truncated PMF of the number of transmitters per aggregator"""
    probs: List[float]
    mean_na: float = Field(..., ge=0.0, description="lambda_u / lambda_a")
    l_max: int = Field(..., ge=1)
    truncation_mass: float = Field(..., ge=0.0, description="Probability beyond l_max")

    @property
    def p_empty(self) -> float:
        return self.probs[0]


class DelayEstimate(BaseModel):
    """Expected duration and delay conditioned on rate coverage"""
    expected_duration: float = Field(..., ge=0.0, description="Seconds")
    expected_delay: float = Field(..., description="Seconds, relative to direct transmission")
    normalized: bool = Field(default=False, description="Divided by the conditioning probability")
    conditioning_probability: float = Field(..., ge=0.0, le=1.0)


class HopBounds(BaseModel):
    """Upper and lower bounds on the number of stages"""
    k_upper: int = Field(..., ge=1)
    k_lower: int = Field(..., ge=1)
    epsilon: float = Field(..., gt=0.0, lt=1.0)
    t: float = Field(..., gt=0.0)

    @property
    def ordered(self) -> bool:
        return self.k_lower <= self.k_upper


class GammaOptimum(BaseModel):
    """Result of the aggregator-fraction optimizer"""
    gamma_opt: float
    energy: EnergyBreakdown
    converged: bool
    precondition_holds: bool = Field(..., description="c_K nondecreasing in gamma on the search bracket")
    iterations: int


class McEstimate(BaseModel):
    """Monte Carlo mean with a normal-approximation 95% interval"""
    mean: float
    half_width_95: float = Field(..., ge=0.0)
    n_samples: int = Field(..., ge=100)
    variance: float = Field(default=0.0, ge=0.0, description="Sample variance")

    @classmethod
    def from_samples(cls, samples) -> "McEstimate":
        values = np.asarray(samples, dtype=float)
        if values.size < 100:
            from .errors import InsufficientSamplesError
            raise InsufficientSamplesError(f"Need at least 100 samples, got {values.size}", n=values.size)
        variance = float(values.var(ddof=1))
        return cls(mean=float(values.mean()),
                   half_width_95=1.96 * math.sqrt(variance / values.size),
                   n_samples=int(values.size),
                   variance=variance)

    def combine(self, other: "McEstimate") -> "McEstimate":
        """Pool two estimates as if their samples had been concatenated"""
        n = self.n_samples + other.n_samples
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n_samples / n
        m2 = (self.variance * (self.n_samples - 1) + other.variance * (other.n_samples - 1)
              + delta ** 2 * self.n_samples * other.n_samples / n)
        variance = m2 / (n - 1)
        return McEstimate(mean=mean, half_width_95=1.96 * math.sqrt(variance / n),
                          n_samples=n, variance=variance)

    def contains(self, value: float, widen: float = 1.0) -> bool:
        return abs(self.mean - value) <= widen * self.half_width_95


class Deployment(BaseModel):
    """One sampled realization of devices, BSs and stage associations"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    region_half_width: float = Field(..., gt=0.0, description="Square region [-R, R]^2 in km")
    seed: int = Field(..., ge=0)
    points: np.ndarray = Field(..., description="Device coordinates, shape (n, 2)")
    tier_of: np.ndarray = Field(..., description="0 for transmit-only devices, k for stage-k aggregators")
    bs_points: np.ndarray = Field(..., description="BS coordinates, shape (m, 2)")
    tx_index: List[np.ndarray] = Field(..., description="Per stage, device indices of the transmitters")
    rx_points: List[np.ndarray] = Field(..., description="Per stage, receiver coordinates")
    assoc: List[np.ndarray] = Field(..., description="Per stage, serving receiver of each transmitter")
    distance: List[np.ndarray] = Field(..., description="Per stage, link distance of each transmitter")

    @property
    def k_total(self) -> int:
        return len(self.tx_index)

    @property
    def area(self) -> float:
        return (2.0 * self.region_half_width) ** 2

    def loads(self, k: int) -> np.ndarray:
        """Number of transmitters served by each stage-k receiver"""
        return np.bincount(self.assoc[k - 1], minlength=len(self.rx_points[k - 1]))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for array in [self.points, self.tier_of, self.bs_points, *self.assoc]:
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


class EmpiricalCoverage(BaseModel):
    """Empirical coverage curve for one mode"""
    mode: TransmissionMode
    kind: str = Field(..., description="'sir' or 'rate'")
    thresholds: List[float]
    per_stage: List[List[float]] = Field(..., description="Per stage, coverage at each threshold")
    joint: List[float] = Field(..., description="End-to-end coverage at each threshold")
    n_samples: int = Field(..., ge=0, description="Stage-1 transmitters contributing to the joint")
    mean_duration: Optional[float] = Field(default=None, description="Mean of M K min(1/R, 1/rho) over measured paths, rho the first threshold")


class CorrelationRow(BaseModel):
    """Load correlation between consecutive stages"""
    gamma: float
    k: int = Field(..., ge=1, description="Pairs stage k with stage k+1")
    rho: float = Field(..., description="Pearson correlation, nan when too few pairs")
    n_pairs: int = Field(..., ge=0)


class RunManifest(BaseModel):
    """Provenance of one CLI run"""
    command: str
    config_hash: str
    seed: Optional[int] = None
    outputs: List[str] = Field(default_factory=list)
    arguments: Dict[str, str] = Field(default_factory=dict)
    started_at: str
    wall_clock: float = Field(default=0.0, ge=0.0, description="Seconds")
    version: str

    @property
    def manifest_hash(self) -> str:
        """Hash of everything that determines the CSV content"""
        payload = "|".join([self.command, self.config_hash, str(self.seed), self.version]
                           + [f"{key}={value}" for key, value in sorted(self.arguments.items())])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]
