"""
Cell load distribution, rate coverage for the three transmission modes and
expected delay relative to direct transmission.

The number of transmitters in a typical aggregator cell is negative binomial
with shape 3.5 (Poisson counts over a gamma-distributed Voronoi area).
"""

import math
import logging
from functools import partial
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.interpolate import PchipInterpolator

from .config import Config
from .coverage import phase_stages, stage_sir_coverage_many, thinning_probabilities
from .errors import DomainError, TruncationError
from .model import VORONOI_SHAPE, build_stage_plan, transmission_plan
from .schemas import (DelayEstimate, LoadPmf, NetworkConfig, RateThreshold, StageCoverage, StagePlan,
                      TransmissionMode)

# Configure logging
logger = logging.getLogger(__name__)

MAX_TRUNCATION = 1e-4
AUTO_TRUNCATION = 1e-6

# stage SIR coverage is tabulated when power is finite and many thresholds are needed
SIR_TABLE_PER_DECADE = 8
SIR_TABLE_MAX = 1e4

# duration integrals: odd-sized geometric t-grid over (DURATION_SPAN/rho, 1/rho)
DURATION_POINTS = 129
DURATION_SPAN = 1e-4


def _load_distribution(mean_na: float):
    return stats.nbinom(VORONOI_SHAPE, VORONOI_SHAPE / (VORONOI_SHAPE + mean_na))


def load_pmf(lambda_u: float, lambda_a: float, l_max: int = Config.L_MAX,
             max_truncation: float = MAX_TRUNCATION) -> LoadPmf:
    """P(N_a = l) for l = 0..l_max"""
    if lambda_a <= 0:
        raise DomainError(f"aggregator density must be positive, got {lambda_a}")
    if l_max < 1:
        raise DomainError(f"l_max must be at least 1, got {l_max}")
    mu = lambda_u / lambda_a
    if mu == 0:
        probs = [1.0] + [0.0] * l_max
        return LoadPmf(probs=probs, mean_na=0.0, l_max=l_max, truncation_mass=0.0)

    dist = _load_distribution(mu)
    probs = dist.pmf(np.arange(l_max + 1))
    truncation = float(dist.sf(l_max))
    if truncation > max_truncation:
        suggested = int(dist.isf(max_truncation)) + 1
        raise TruncationError(
            f"Load PMF truncated at l_max={l_max} leaves mass {truncation:.3g} > {max_truncation:g}; "
            f"use l_max >= {suggested}", mean_na=mu, l_max=l_max)
    return LoadPmf(probs=[float(p) for p in probs], mean_na=mu, l_max=l_max, truncation_mass=truncation)


def auto_l_max(lambda_u: float, lambda_a: float, floor: int = Config.L_MAX,
               tail: float = AUTO_TRUNCATION) -> int:
    """Smallest truncation bound >= floor whose tail mass is below tail"""
    mu = lambda_u / lambda_a
    if mu == 0:
        return floor
    return max(floor, int(_load_distribution(mu).isf(tail)) + 1)


def load_pgf(z, mean_na: float):
    """Probability generating function of the cell load"""
    z = np.asarray(z, dtype=float)
    value = (VORONOI_SHAPE / (VORONOI_SHAPE + (1.0 - z) * mean_na)) ** VORONOI_SHAPE
    return float(value) if value.ndim == 0 else value


def conditional_mean_na(plan: StagePlan) -> List[float]:
    """E[N_a(k) | N_a(k) > 0] = E[N_a(k)] / p_th(k)"""
    return [mu / p if p > 0 else 0.0 for mu, p in zip(plan.mean_na, thinning_probabilities(plan))]


def mean_inverse_load(pmf: LoadPmf) -> float:
    """E[1/N_a | N_a >= 1] over the truncated PMF"""
    nonempty = 1.0 - pmf.probs[0]
    if nonempty <= 0:
        raise DomainError("E[1/N_a] is undefined when every cell is empty")
    l = np.arange(1, pmf.l_max + 1)
    return float(np.sum(np.asarray(pmf.probs[1:]) / l) / nonempty)


def time_sharing_factor(plan: StagePlan, mode: TransmissionMode) -> float:
    """Multiplier of rho*l/W in the SIR threshold: K stages share time sequentially, half-duplex halves the rate"""
    if mode == TransmissionMode.SEQUENTIAL:
        return float(plan.k_total)
    if mode == TransmissionMode.HALF_DUPLEX:
        return 2.0
    return 1.0


def _stage_pmf(plan: StagePlan, k: int, l_max: Optional[int]) -> LoadPmf:
    stage = plan.stage(k)
    if l_max is None:
        bound = auto_l_max(stage.lambda_u, stage.lambda_a)
        return load_pmf(stage.lambda_u, stage.lambda_a, bound, max_truncation=AUTO_TRUNCATION)
    return load_pmf(stage.lambda_u, stage.lambda_a, l_max)


def _rate_thresholds(cfg: NetworkConfig, factor: float, rho: float, l_max: int) -> np.ndarray:
    """SIR thresholds 2^(f rho l / W) - 1 for l = 1..l_max; inf where they overflow"""
    exponents = factor * rho * np.arange(1, l_max + 1) / cfg.w
    with np.errstate(over="ignore"):
        return np.expm1(exponents * math.log(2.0))


def _table_size(t_min: float) -> int:
    decades = max(math.log10(SIR_TABLE_MAX) - math.log10(t_min), 1.0)
    return int(math.ceil(decades * SIR_TABLE_PER_DECADE)) + 1


class SirTable:
    """Stage SIR coverage tabulated on a log-threshold grid

    Interpolation is monotone (PCHIP in log T). Thresholds below the grid take
    the first tabulated value and thresholds above SIR_TABLE_MAX count as
    uncovered.
    """

    def __init__(self, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int,
                 p_th: Sequence[float], t_min: float):
        log_lo = min(math.log10(t_min), math.log10(SIR_TABLE_MAX) - 1.0)
        self.log_t = np.linspace(log_lo, math.log10(SIR_TABLE_MAX), _table_size(10.0 ** log_lo))
        self.values = stage_sir_coverage_many(cfg, plan, mode, k, 10.0 ** self.log_t, p_th)
        self._interp = PchipInterpolator(self.log_t, self.values)
        logger.debug(f"Tabulated stage {k} SIR coverage at {len(self.log_t)} thresholds "
                     f"from {10.0 ** log_lo:.3g}")

    def __call__(self, thresholds: np.ndarray) -> np.ndarray:
        log_t = np.log10(np.asarray(thresholds, dtype=float))
        covered = self._interp(np.clip(log_t, self.log_t[0], self.log_t[-1]))
        covered[log_t > self.log_t[-1]] = 0.0
        return np.clip(covered, 0.0, 1.0)


def _stage_coverage_fn(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int,
                       p_th: Sequence[float], t_min: float, n_thresholds: int) -> Callable[[np.ndarray], np.ndarray]:
    """Exact evaluator when it is cheap enough, a SirTable otherwise"""
    if cfg.unlimited_power or n_thresholds <= _table_size(t_min):
        return partial(stage_sir_coverage_many, cfg, plan, mode, k, p_th=p_th)
    return SirTable(cfg, plan, mode, k, p_th, t_min)


def _stage_rate_coverage(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int, rho: float,
                         pmf: LoadPmf, coverage: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum over l of P(SIR_k > 2^(f rho l / W) - 1) P(N_a(k) = l); an empty cell counts as covered"""
    thresholds = _rate_thresholds(cfg, time_sharing_factor(plan, mode), rho, pmf.l_max)
    usable = np.isfinite(thresholds)
    probs = np.asarray(pmf.probs[1:])
    covered = np.zeros_like(thresholds)
    if usable.any():
        covered[usable] = coverage(thresholds[usable])
    return float(pmf.probs[0] + np.sum(covered * probs))


def _covered_stages(plan: StagePlan, mode: TransmissionMode, phase: str) -> List[int]:
    return phase_stages(plan, phase) if mode == TransmissionMode.HALF_DUPLEX else list(plan.stages)


def rate_coverage_per_stage(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, rho: float,
                            l_max: Optional[int] = None, phase: str = "odd") -> StageCoverage:
    """Per-stage P(R_k > rho); half-duplex stages outside the phase count as one"""
    rho = RateThreshold(rho=rho).rho
    plan = transmission_plan(cfg, plan, mode)
    stages = _covered_stages(plan, mode, phase)
    p_th = thinning_probabilities(plan)
    t_min = float(_rate_thresholds(cfg, time_sharing_factor(plan, mode), rho, 1)[0])
    per_stage = []
    for k in plan.stages:
        if k not in stages:
            per_stage.append(1.0)
            continue
        pmf = _stage_pmf(plan, k, l_max)
        coverage = _stage_coverage_fn(cfg, plan, mode, k, p_th, t_min, pmf.l_max)
        per_stage.append(_stage_rate_coverage(cfg, plan, mode, k, rho, pmf, coverage))
    return StageCoverage.from_per_stage(per_stage)


def rate_coverage(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, rho: float,
                  l_max: Optional[int] = None, phase: str = "odd") -> float:
    """P(R > rho) end to end, assuming independent stages

    With l_max=None each stage truncates its load PMF where the tail drops
    below 1e-6 (never below Config.L_MAX); an explicit l_max is checked
    against the 1e-4 truncation guard. Half-duplex is evaluated on its own
    gamma^2 plan.
    """
    return rate_coverage_per_stage(cfg, plan, mode, rho, l_max, phase).total


def rate_coverage_curve(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, rho_grid: Sequence[float],
                        l_max: Optional[int] = None, phase: str = "odd") -> List[float]:
    rho_grid = [RateThreshold(rho=rho).rho for rho in rho_grid]
    if not rho_grid:
        return []
    plan = transmission_plan(cfg, plan, mode)
    stages = _covered_stages(plan, mode, phase)
    p_th = thinning_probabilities(plan)
    factor = time_sharing_factor(plan, mode)
    t_min = float(_rate_thresholds(cfg, factor, min(rho_grid), 1)[0])
    pmfs, coverage = {}, {}
    for k in stages:
        pmfs[k] = _stage_pmf(plan, k, l_max)
        coverage[k] = _stage_coverage_fn(cfg, plan, mode, k, p_th, t_min, pmfs[k].l_max * len(rho_grid))
    curve = []
    for rho in rho_grid:
        total = 1.0
        for k in stages:
            total *= _stage_rate_coverage(cfg, plan, mode, k, rho, pmfs[k], coverage[k])
        curve.append(min(max(total, 0.0), 1.0))
    return curve


def _duration_integral(coverage_curve: Callable[[Sequence[float]], List[float]], rho: float) -> float:
    """Integral over t in (0, 1/rho) of the rate outage at threshold 1/t

    The outage is sampled once on a geometric t-grid over
    (DURATION_SPAN/rho, 1/rho) and integrated with Simpson's rule; below the
    grid it is taken as one.
    """
    t = np.geomspace(DURATION_SPAN / rho, 1.0 / rho, DURATION_POINTS)
    outage = 1.0 - np.asarray(coverage_curve(1.0 / t))
    return t[0] + float(integrate.simpson(outage, x=t))


def _direct_plan(cfg: NetworkConfig) -> StagePlan:
    # gamma is irrelevant for a single stage
    return build_stage_plan(cfg, 0.25, 1)


def expected_inverse_rate_direct(cfg: NetworkConfig, rho: float, l_max: Optional[int] = None) -> float:
    """E[min(1/R, 1/rho)] for direct transmission, the integral of the rate outage over t in (0, 1/rho)"""
    rho = RateThreshold(rho=rho).rho
    plan = _direct_plan(cfg)
    return _duration_integral(
        lambda rates: rate_coverage_curve(cfg, plan, TransmissionMode.SEQUENTIAL, rates, l_max), rho)


def expected_conditional_delay(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, rho: float,
                               normalized: bool = False, l_max: Optional[int] = None,
                               phase: str = "odd") -> DelayEstimate:
    """Expected K-stage duration and its excess over direct transmission, given rate above rho

    The duration is M K times the integral over t in (0, 1/rho) of the rate
    outage at threshold 1/t. With normalized=True both terms are divided by
    P(R > rho) of their own transmission scheme.
    """
    rho = RateThreshold(rho=rho).rho
    conditioning = rate_coverage(cfg, plan, mode, rho, l_max, phase)
    inverse_direct = expected_inverse_rate_direct(cfg, rho, l_max)
    direct_duration = cfg.m_payload * inverse_direct

    if normalized:
        direct_conditioning = rate_coverage(cfg, _direct_plan(cfg), TransmissionMode.SEQUENTIAL, rho, l_max)
        direct_duration = direct_duration / direct_conditioning if direct_conditioning > 0 else math.inf

    if plan.k_total == 1:
        logger.debug("Single-stage plan: duration equals the direct-transmission duration")
        return DelayEstimate(expected_duration=direct_duration, expected_delay=0.0,
                             normalized=normalized, conditioning_probability=conditioning)

    duration = cfg.m_payload * plan.k_total * _duration_integral(
        lambda rates: rate_coverage_curve(cfg, plan, mode, rates, l_max, phase), rho)
    if normalized:
        duration = duration / conditioning if conditioning > 0 else math.inf

    logger.info(f"{mode.value} K={plan.k_total} rho={rho:g}: duration={duration:.6g}s, "
                f"direct={direct_duration:.6g}s")
    return DelayEstimate(expected_duration=duration, expected_delay=duration - direct_duration,
                         normalized=normalized, conditioning_probability=conditioning)
