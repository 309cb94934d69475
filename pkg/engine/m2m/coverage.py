"""
Analytic SIR coverage under truncated channel inversion.

Interferer link distances follow the Rayleigh law of the nearest-aggregator
distance, sigma^2 = 1/(2 pi lambda_a). Conditional expectations over
R > r_c are taken in the variable w = pi lambda_a (R^2 - r_c^2), which is
unit exponential, so every integral runs over the same finite window.
"""

import math
import logging
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError
from .model import critical_distance, thinning_probability, transmission_plan
from .schemas import (CoverageVector, LaplaceEval, NetworkConfig, SirThreshold, StageCoverage,
                      StagePlan, TransmissionMode)
from .specfun import b_alpha, c_alpha, quadrature, upper_incomplete_gamma

# Configure logging
logger = logging.getLogger(__name__)

# exp(-W_MAX) = 1e-12 is the neglected Rayleigh tail mass
W_MAX = -math.log(1e-12)

PHASES = ("odd", "even", "both")


def _tail_expectation(func: Callable[[float], float], lambda_a: float, r_c: float, what: str) -> float:
    """E[func(R) | R > r_c] for R Rayleigh with sigma^2 = 1/(2 pi lambda_a)"""
    scale = math.pi * lambda_a

    def integrand(w: float) -> float:
        return func(math.sqrt(r_c * r_c + w / scale)) * math.exp(-w)

    return quadrature(integrand, 0.0, W_MAX, what=what)


def _check_laplace_args(cfg: NetworkConfig, lambda_a: float, s: float):
    if s <= 0:
        raise DomainError(f"Laplace argument must be positive, got s={s}")
    if lambda_a <= 0:
        raise DomainError(f"aggregator density must be positive, got {lambda_a}")
    if cfg.p_bar_t <= 0:
        raise DomainError("coverage needs a positive target received power")


def _near_fraction(x: float) -> float:
    """pi lambda E[R^2; R < r_c] = 1 - e^-x (1 + x) with x = pi lambda r_c^2"""
    return float(special.gammainc(2.0, x))


def _intra_exponent(cfg: NetworkConfig, lambda_eff: float, lambda_assoc: float, s: float) -> float:
    """Log Laplace transform of same-stage interference (interferers farther than their own link)"""
    if lambda_eff == 0:
        return 0.0
    alpha, p_bar = cfg.alpha, cfg.p_bar_t
    k2 = 2.0 * s / (alpha - 2.0)
    r_c = critical_distance(cfg).r_c
    if math.isinf(r_c):
        return -k2 * p_bar * c_alpha(alpha, s * p_bar)

    near = _near_fraction(math.pi * lambda_eff * r_c ** 2) * p_bar * c_alpha(alpha, s * p_bar)
    far = 0.0
    tail = math.exp(-math.pi * lambda_assoc * r_c ** 2)
    if tail > 0:
        p_max = cfg.p_t_max

        def capped(r: float) -> float:
            return r ** (2.0 - alpha) * c_alpha(alpha, s * p_max * r ** -alpha)

        expectation = _tail_expectation(capped, lambda_assoc, r_c, "intra-stage interference")
        far = tail * math.pi * lambda_eff * p_max * expectation
    return -k2 * (near + far)


def _full_plane_kernel(alpha: float, u: float) -> float:
    """B_alpha(u) + 2u C_alpha(u)/(alpha-2): interference kernel without an exclusion region"""
    return b_alpha(alpha, u) + 2.0 * u / (alpha - 2.0) * c_alpha(alpha, u)


def _inter_exponent(cfg: NetworkConfig, lambda_eff: float, lambda_assoc: float, s: float) -> float:
    """Log Laplace transform contributed by one other active stage"""
    if lambda_eff == 0:
        return 0.0
    alpha, p_bar = cfg.alpha, cfg.p_bar_t
    r_c = critical_distance(cfg).r_c
    if math.isinf(r_c):
        return -_full_plane_kernel(alpha, s * p_bar)

    near = _near_fraction(math.pi * lambda_eff * r_c ** 2) * _full_plane_kernel(alpha, s * p_bar)
    far = 0.0
    tail = math.exp(-math.pi * lambda_assoc * r_c ** 2)
    if tail > 0:
        p_max = cfg.p_t_max

        def capped(r: float) -> float:
            return r * r * _full_plane_kernel(alpha, s * p_max * r ** -alpha)

        expectation = _tail_expectation(capped, lambda_assoc, r_c, "inter-stage interference")
        far = tail * math.pi * lambda_eff * expectation
    return -(near + far)


def laplace_interference(cfg: NetworkConfig, lambda_a: float, s: float) -> LaplaceEval:
    """Laplace transform of the uplink interference seen by a typical aggregator"""
    _check_laplace_args(cfg, lambda_a, s)
    return LaplaceEval(s=s, value=math.exp(_intra_exponent(cfg, lambda_a, lambda_a, s)))


def laplace_interference_lower_bound(cfg: NetworkConfig, lambda_a: float, s: float) -> LaplaceEval:
    """Lower bound obtained by replacing C_alpha by 1 for capped interferers

    The capped term is E[R^(2-alpha); R > r_c] under the Rayleigh law, which
    is an upper incomplete gamma of order 2 - alpha/2 at pi lambda_a r_c^2.
    The order is 2 - alpha/2, not 2 - 2/alpha as the bound is sometimes
    printed.
    """
    _check_laplace_args(cfg, lambda_a, s)
    alpha, p_bar = cfg.alpha, cfg.p_bar_t
    k2 = 2.0 * s / (alpha - 2.0)
    r_c = critical_distance(cfg).r_c
    if math.isinf(r_c):
        return LaplaceEval(s=s, value=math.exp(-k2 * p_bar * c_alpha(alpha, s * p_bar)))

    pi_la = math.pi * lambda_a
    x = pi_la * r_c ** 2
    near = _near_fraction(x) * p_bar * c_alpha(alpha, s * p_bar)
    far = cfg.p_t_max * pi_la ** (alpha / 2.0) * upper_incomplete_gamma(2.0 - alpha / 2.0, x)
    return LaplaceEval(s=s, value=math.exp(-k2 * (near + far)))


def _coverage_from_laplace(cfg: NetworkConfig, lambda_a: float, t: float,
                           laplace: Callable[[float], float], what: str) -> float:
    """p L(T/P_bar) + E[L(T R^alpha / P_max); R > r_c]"""
    r_c = critical_distance(cfg).r_c
    if math.isinf(r_c):
        return laplace(t / cfg.p_bar_t)

    x = math.pi * lambda_a * r_c ** 2
    inverted = -math.expm1(-x) * laplace(t / cfg.p_bar_t)
    tail = math.exp(-x)
    capped = 0.0
    if tail > 0:
        alpha, p_max = cfg.alpha, cfg.p_t_max
        capped = tail * _tail_expectation(lambda r: laplace(t * r ** alpha / p_max), lambda_a, r_c, what)
    return min(max(inverted + capped, 0.0), 1.0)


def sir_coverage_single(cfg: NetworkConfig, lambda_a: float, t: float) -> float:
    """P(SIR > T) for a typical link of a single aggregation stage"""
    t = SirThreshold(t=t).t
    if cfg.p_bar_t <= 0:
        raise DomainError("coverage needs a positive target received power")
    if lambda_a <= 0:
        raise DomainError(f"aggregator density must be positive, got {lambda_a}")
    if cfg.unlimited_power:
        return math.exp(-2.0 * t * c_alpha(cfg.alpha, t) / (cfg.alpha - 2.0))
    return _coverage_from_laplace(cfg, lambda_a, t,
                                  lambda s: laplace_interference(cfg, lambda_a, s).value,
                                  "single-stage coverage")


def sir_coverage_lower_bound(cfg: NetworkConfig, lambda_a: float, t: float) -> float:
    """Coverage evaluated with the lower-bound Laplace transform"""
    t = SirThreshold(t=t).t
    return _coverage_from_laplace(cfg, lambda_a, t,
                                  lambda s: laplace_interference_lower_bound(cfg, lambda_a, s).value,
                                  "lower-bound coverage")


def thinning_probabilities(plan: StagePlan) -> List[float]:
    """Per-stage probability that an aggregator cell is nonempty"""
    return [thinning_probability(mu) for mu in plan.mean_na]


def mode_thinning_probabilities(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode) -> List[float]:
    """Thinning probabilities of the plan the mode runs on"""
    return thinning_probabilities(transmission_plan(cfg, plan, mode))


def _resolve_thinning(plan: StagePlan, p_th: Optional[Sequence[float]]) -> List[float]:
    values = thinning_probabilities(plan) if p_th is None else list(p_th)
    if len(values) != plan.k_total:
        raise DomainError(f"Need {plan.k_total} thinning probabilities, got {len(values)}")
    return values


def laplace_intra_stage(cfg: NetworkConfig, plan: StagePlan, k: int, p_th: Optional[Sequence[float]],
                        s: float) -> LaplaceEval:
    """Laplace transform of the interference from other cells of stage k"""
    stage = plan.stage(k)
    _check_laplace_args(cfg, stage.lambda_a, s)
    p_th = _resolve_thinning(plan, p_th)
    exponent = _intra_exponent(cfg, p_th[k - 1] * stage.lambda_a, stage.lambda_a, s)
    return LaplaceEval(s=s, value=math.exp(exponent))


def laplace_inter_stage(cfg: NetworkConfig, plan: StagePlan, k: int, active_set: Iterable[int],
                        p_th: Optional[Sequence[float]], s: float) -> LaplaceEval:
    """Laplace transform of the interference from the other simultaneously active stages"""
    plan.stage(k)
    active = sorted(set(active_set))
    if k in active:
        raise DomainError(f"Active set must exclude the tagged stage {k}")
    p_th = _resolve_thinning(plan, p_th)
    exponent = 0.0
    for l in active:
        other = plan.stage(l)
        _check_laplace_args(cfg, other.lambda_a, s)
        exponent += _inter_exponent(cfg, p_th[l - 1] * other.lambda_a, other.lambda_a, s)
    return LaplaceEval(s=s, value=math.exp(exponent))


def active_stages(plan: StagePlan, mode: TransmissionMode, k: int) -> List[int]:
    """Stages transmitting at the same time as stage k, excluding k"""
    if mode == TransmissionMode.SEQUENTIAL:
        return []
    if mode == TransmissionMode.FULL_DUPLEX:
        return [l for l in plan.stages if l != k]
    return [l for l in plan.stages if l != k and l % 2 == k % 2]


def phase_stages(plan: StagePlan, phase: str) -> List[int]:
    """Stages evaluated by a half-duplex phase"""
    if phase not in PHASES:
        raise DomainError(f"Unknown half-duplex phase '{phase}'")
    if phase == "both":
        return list(plan.stages)
    parity = 1 if phase == "odd" else 0
    return [k for k in plan.stages if k % 2 == parity]


def stage_sir_coverage(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int, t: float,
                       p_th: Optional[Sequence[float]] = None) -> float:
    """P(SIR_k > T) for stage k under the interference pattern of the given mode"""
    stage = plan.stage(k)
    if mode == TransmissionMode.SEQUENTIAL:
        return sir_coverage_single(cfg, stage.lambda_a, t)

    t = SirThreshold(t=t).t
    p_th = _resolve_thinning(plan, p_th)
    others = active_stages(plan, mode, k)

    def joint_laplace(s: float) -> float:
        return (laplace_intra_stage(cfg, plan, k, p_th, s).value
                * laplace_inter_stage(cfg, plan, k, others, p_th, s).value)

    return _coverage_from_laplace(cfg, stage.lambda_a, t, joint_laplace, f"stage {k} {mode.value} coverage")


def stage_sir_coverage_many(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int,
                            thresholds: np.ndarray, p_th: Optional[Sequence[float]] = None) -> np.ndarray:
    """stage_sir_coverage over an array of thresholds; vectorized when power is unlimited"""
    thresholds = np.asarray(thresholds, dtype=float)
    if not cfg.unlimited_power:
        return np.array([stage_sir_coverage(cfg, plan, mode, k, float(t), p_th) for t in thresholds])

    plan.stage(k)
    alpha = cfg.alpha
    same_stage = 2.0 * thresholds * c_alpha(alpha, thresholds) / (alpha - 2.0)
    if mode == TransmissionMode.SEQUENTIAL:
        return np.exp(-same_stage)

    p_th = _resolve_thinning(plan, p_th)
    exponent = same_stage if p_th[k - 1] > 0 else np.zeros_like(thresholds)
    interferers = sum(1 for l in active_stages(plan, mode, k) if p_th[l - 1] > 0)
    if interferers:
        exponent = exponent + interferers * (b_alpha(alpha, thresholds) + same_stage)
    return np.exp(-exponent)


def sir_coverage_mode(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, t: float,
                      phase: str = "odd") -> StageCoverage:
    """Per-stage and joint SIR coverage of a K-stage plan

    Half-duplex runs on its gamma^2 plan and evaluates the stages of the
    selected phase; stages of the other phase contribute a factor of one.
    """
    t = SirThreshold(t=t).t
    plan = transmission_plan(cfg, plan, mode)
    evaluated = phase_stages(plan, phase) if mode == TransmissionMode.HALF_DUPLEX else list(plan.stages)
    p_th = thinning_probabilities(plan)
    per_stage = [stage_sir_coverage(cfg, plan, mode, k, t, p_th) if k in evaluated else 1.0
                 for k in plan.stages]
    return StageCoverage.from_per_stage(per_stage)


def joint_coverage_vector(coverage: StageCoverage) -> CoverageVector:
    """P_cov(k-1) for k = 1..K, ready for total_energy_density"""
    return CoverageVector(p_cov=[1.0] + list(coverage.joint[:-1]))


def coverage_rule(cfg: NetworkConfig, mode: TransmissionMode, t: float,
                  phase: str = "odd") -> Callable[[StagePlan], CoverageVector]:
    """Coverage supplier for optimize_gamma"""
    def rule(plan: StagePlan) -> CoverageVector:
        return joint_coverage_vector(sir_coverage_mode(cfg, plan, mode, t, phase))
    return rule
