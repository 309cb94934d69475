"""
Stage bookkeeping: critical distance and the per-stage densities, loads and
transmit-time scalings of a (gamma, K) aggregation plan.
"""

import math
import logging
from typing import List

from .errors import DegeneratePlanError, DomainError
from .schemas import CriticalDistance, NetworkConfig, StagePlan, TransmissionMode

# Configure logging
logger = logging.getLogger(__name__)

# Shape parameter of the gamma approximation to the Poisson-Voronoi cell area
VORONOI_SHAPE = 3.5


def critical_distance(cfg: NetworkConfig) -> CriticalDistance:
    """r_c = (P_Tmax / P_bar_T)^(1/alpha), infinite for unlimited transmit power"""
    if cfg.unlimited_power or cfg.p_bar_t == 0:
        return CriticalDistance(r_c=math.inf)
    return CriticalDistance(r_c=(cfg.p_t_max / cfg.p_bar_t) ** (1.0 / cfg.alpha))


def aggregator_sum(gamma: float, k_total: int) -> float:
    """gamma_bar_K = gamma + gamma^2 + ... + gamma^(K-1)"""
    return math.fsum(gamma ** k for k in range(1, k_total))


def effective_last_stage_fraction(cfg: NetworkConfig, gamma: float, k_total: int) -> float:
    """Aggregator fraction seen by the last stage, whose receivers are the BSs"""
    last_transmitters = cfg.lam * gamma ** (k_total - 1)
    return cfg.lambda_bs / (last_transmitters + cfg.lambda_bs)


def build_stage_plan(cfg: NetworkConfig, gamma: float, k_total: int) -> StagePlan:
    """Densities, mean loads and transmit-time scalings for every stage

    Stage k < K aggregates at density lambda*gamma^k; the last stage always
    delivers to the BS tier, so K = 1 is direct transmission.
    """
    if not 0.0 < gamma < 0.5:
        raise DomainError(f"gamma must lie in (0, 0.5), got {gamma}")
    if k_total < 1 or int(k_total) != k_total:
        raise DomainError(f"k_total must be a positive integer, got {k_total}")
    k_total = int(k_total)

    last_transmitters = cfg.lam * gamma ** (k_total - 1)
    if last_transmitters < cfg.lambda_bs:
        raise DegeneratePlanError(
            f"Last stage has fewer transmitters than BSs (lambda*gamma^(K-1)={last_transmitters:.6g} < "
            f"lambda_bs={cfg.lambda_bs:.6g})", gamma=gamma, k_total=k_total)

    lambda_u: List[float] = [cfg.lam * (1.0 - aggregator_sum(gamma, k_total))]
    lambda_u += [cfg.lam * gamma ** (k - 1) for k in range(2, k_total + 1)]
    lambda_a = [cfg.lam * gamma ** k for k in range(1, k_total)] + [cfg.lambda_bs]
    mean_na = [u / a for u, a in zip(lambda_u, lambda_a)]

    t_tx = [1.0]
    for k in range(1, k_total):
        t_tx.append(t_tx[-1] * mean_na[k - 1])

    plan = StagePlan(
        gamma=gamma,
        k_total=k_total,
        lambda_u=tuple(lambda_u),
        lambda_a=tuple(lambda_a),
        mean_na=tuple(mean_na),
        t_tx=tuple(t_tx),
        gamma_last=effective_last_stage_fraction(cfg, gamma, k_total),
    )
    logger.debug(f"Built stage plan gamma={gamma:.6g} K={k_total}: mean loads {plan.mean_na}")
    return plan


def tier_masses(plan: StagePlan) -> List[float]:
    """Probability that a device is transmit-only (index 0) or a stage-k aggregator (index k < K)"""
    masses = [1.0 - aggregator_sum(plan.gamma, plan.k_total)]
    masses += [plan.gamma ** k for k in range(1, plan.k_total)]
    return masses


def thinning_probability(mean_na: float) -> float:
    """Probability that an aggregator cell holds at least one transmitter"""
    if mean_na < 0:
        raise DomainError(f"mean load must be nonnegative, got {mean_na}")
    return 1.0 - (VORONOI_SHAPE / (VORONOI_SHAPE + mean_na)) ** VORONOI_SHAPE


def half_duplex_plan(cfg: NetworkConfig, plan: StagePlan) -> StagePlan:
    """Plan a half-duplex round runs on

    Only every other level is active in a phase, so consecutive aggregator
    tiers thin by gamma^2 instead of gamma. Loads, thinning probabilities and
    stage costs all follow from the squared fraction.
    """
    if plan.half_duplex:
        return plan
    hd = build_stage_plan(cfg, plan.gamma ** 2, plan.k_total)
    return hd.model_copy(update={"half_duplex": True})


def transmission_plan(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode) -> StagePlan:
    """Stage plan the given transmission mode actually runs on"""
    if mode == TransmissionMode.HALF_DUPLEX:
        return half_duplex_plan(cfg, plan)
    return plan
