"""
Bounds on the number of aggregation stages.

The upper bound comes from the end-to-end SIR outage budget: K stages that
each succeed with probability at most P_max must still succeed jointly with
probability 1 - epsilon. The lower bound comes from the transmit range: with
finite maximum power a stage can only bridge so much distance, so the mean
connection length has to be split over enough hops.
"""

import math
import logging
from typing import Optional, Sequence

from .coverage import sir_coverage_single
from .errors import DomainError, HopScanExhaustedError, UnboundedHopsError
from .rate import auto_l_max, load_pmf, mean_inverse_load
from .schemas import HopBounds, NetworkConfig
from .specfun import c_alpha

# Configure logging
logger = logging.getLogger(__name__)

MAX_STAGES = 64


def _check_epsilon(epsilon: float):
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"outage budget must lie in (0, 1), got {epsilon}")


def _outage_exponent(epsilon: float) -> float:
    return -math.log1p(-epsilon)


def k_upper_bound(cfg: NetworkConfig, epsilon: float, t: Optional[float] = None,
                  per_stage_coverage: Optional[Sequence[float]] = None) -> int:
    """K_U = ceil(log(1/(1-epsilon)) / -log(max_k P_k(T)))

    Without per-stage coverage the bound uses the unlimited-power closed form
    -log P(T) = 2 T C_alpha(T) / (alpha - 2), which needs t.
    """
    _check_epsilon(epsilon)
    if per_stage_coverage is not None:
        if len(per_stage_coverage) == 0:
            raise DomainError("per-stage coverage must not be empty")
        best = max(per_stage_coverage)
        if not 0.0 < best <= 1.0 or min(per_stage_coverage) <= 0.0:
            raise DomainError(f"coverage values must lie in (0, 1], got {list(per_stage_coverage)}")
        if best >= 1.0:
            raise UnboundedHopsError("A stage with coverage one never uses outage budget",
                                     epsilon=epsilon, coverage=best)
        decay = -math.log(best)
    else:
        if t is None:
            raise DomainError("the closed-form bound needs an SIR threshold t")
        if t < 0:
            raise DomainError(f"SIR threshold must be nonnegative, got {t}")
        decay = 2.0 * t * float(c_alpha(cfg.alpha, t)) / (cfg.alpha - 2.0)
        if decay <= 0.0:
            raise UnboundedHopsError("Coverage is one at a zero SIR threshold", epsilon=epsilon, t=t)

    return max(1, math.ceil(_outage_exponent(epsilon) / decay))


def mean_connection_length(lambda_u: float, lambda_a: float) -> float:
    """Mean total length of the links in a typical aggregator cell, lambda_u / (2 lambda_a^(3/2))"""
    if lambda_a <= 0 or lambda_u < 0:
        raise DomainError(f"invalid densities lambda_u={lambda_u}, lambda_a={lambda_a}")
    return lambda_u / (2.0 * lambda_a ** 1.5)


def _range_ratio(cfg: NetworkConfig, p_r_min: float) -> float:
    if p_r_min <= 0:
        raise DomainError(f"minimum received power must be positive, got {p_r_min}")
    if p_r_min >= cfg.p_t_max:
        raise DomainError(f"minimum received power {p_r_min} must be below P_Tmax={cfg.p_t_max}")
    return (p_r_min / cfg.p_t_max) ** (1.0 / cfg.alpha)


def k_lower_bound(cfg: NetworkConfig, lambda_u: float, lambda_a: float, p_r_min: float,
                  l_max: Optional[int] = None) -> int:
    """K_L = ceil(E[L] E[1/N_a | N_a >= 1] (P_Rmin / P_Tmax)^(1/alpha)), one for unlimited power"""
    if cfg.unlimited_power:
        return 1
    ratio = _range_ratio(cfg, p_r_min)
    bound = l_max if l_max is not None else auto_l_max(lambda_u, lambda_a)
    pmf = load_pmf(lambda_u, lambda_a, bound)
    value = mean_connection_length(lambda_u, lambda_a) * mean_inverse_load(pmf) * ratio
    return max(1, math.ceil(value))


def k_lower_jensen(cfg: NetworkConfig, lambda_u: float, lambda_a: float, p_r_min: float) -> int:
    """Lower bound on K_L with E[1/N_a] replaced by 1/E[N_a]"""
    if cfg.unlimited_power:
        return 1
    ratio = _range_ratio(cfg, p_r_min)
    value = mean_connection_length(lambda_u, lambda_a) * (lambda_a / lambda_u) * ratio
    return max(1, math.ceil(value))


def k_lower_fixed_point(cfg: NetworkConfig, gamma: float, p_r_min: float,
                        max_stages: int = MAX_STAGES) -> int:
    """Smallest K with ceil(gamma^(-K/2) / (2 sqrt(lambda)) (P_Rmin / P_Tmax)^(1/alpha)) <= K

    The middle-stage load (1 - gamma)/gamma cancels the (1 - gamma)/gamma
    factor of the stage-K connection length.
    """
    if not 0.0 < gamma < 0.5:
        raise DomainError(f"gamma must lie in (0, 0.5), got {gamma}")
    if cfg.unlimited_power:
        return 1
    ratio = _range_ratio(cfg, p_r_min)
    scale = ratio / (2.0 * math.sqrt(cfg.lam))
    log_gamma = math.log(gamma)
    for k in range(1, max_stages + 1):
        bound = math.ceil(scale * math.exp(-0.5 * k * log_gamma))
        if bound <= k:
            logger.debug(f"Fixed point K={k} for gamma={gamma:g} (bound {bound})")
            return k
    raise HopScanExhaustedError(f"No stage count up to {max_stages} satisfies the range bound",
                                gamma=gamma, p_r_min=p_r_min)


def hop_bounds(cfg: NetworkConfig, epsilon: float, t: float, p_r_min: float,
               gamma: Optional[float] = None) -> HopBounds:
    """K_U and K_L for one (epsilon, T) pair

    K_U uses the single-stage coverage at the BS density; K_L uses the
    direct-transmission densities, or the fixed point when gamma is given.
    """
    if cfg.unlimited_power:
        k_upper = k_upper_bound(cfg, epsilon, t=t)
    else:
        k_upper = k_upper_bound(cfg, epsilon, per_stage_coverage=[sir_coverage_single(cfg, cfg.lambda_bs, t)])

    if gamma is None:
        k_lower = k_lower_bound(cfg, cfg.lam, cfg.lambda_bs, p_r_min)
    else:
        k_lower = k_lower_fixed_point(cfg, gamma, p_r_min)

    bounds = HopBounds(k_upper=k_upper, k_lower=k_lower, epsilon=epsilon, t=t)
    if not bounds.ordered:
        logger.warning(f"K_L={k_lower} exceeds K_U={k_upper} at epsilon={epsilon:g}, T={t:g}")
    return bounds
