"""
Closed-form energy model: mean PA power under truncated channel inversion,
mean received power, per-stage energy cost and the aggregator-fraction optimizer.
"""

import math
import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import special

from .errors import ConvergenceError, DegeneratePlanError, DomainError
from .model import VORONOI_SHAPE, aggregator_sum, build_stage_plan, critical_distance, transmission_plan
from .schemas import CoverageVector, EnergyBreakdown, GammaOptimum, NetworkConfig, StagePlan, TransmissionMode
from .specfun import lower_incomplete_gamma, upper_incomplete_gamma

# Configure logging
logger = logging.getLogger(__name__)

LOAD_SPREAD = (VORONOI_SHAPE + 1.0) / VORONOI_SHAPE

GAMMA_BRACKET = (1e-3, 0.5 - 1e-3)
GRID_POINTS = 512
GAMMA_TOL = 1e-5

CoverageRule = Callable[[StagePlan], CoverageVector]


def _check_densities(lambda_u: float, lambda_a: float):
    if lambda_a <= 0:
        raise DomainError(f"aggregator density must be positive, got {lambda_a}")
    if lambda_u < 0:
        raise DomainError(f"transmitter density must be nonnegative, got {lambda_u}")


def mean_uplink_power(cfg: NetworkConfig, lambda_u: float, lambda_a: float) -> float:
    """Mean total PA power of the devices in a typical aggregator cell (mW)"""
    _check_densities(lambda_u, lambda_a)
    if lambda_u == 0 or cfg.p_bar_t == 0:
        return 0.0

    alpha = cfg.alpha
    pi_la = math.pi * lambda_a
    r_c = critical_distance(cfg).r_c
    scale = math.pi * lambda_u * cfg.p_bar_t / (cfg.eta * pi_la ** (1.0 + alpha / 2.0))
    if math.isinf(r_c):
        return scale * special.gamma(alpha / 2.0 + 1.0)

    x = pi_la * r_c ** 2
    inverted = scale * lower_incomplete_gamma(alpha / 2.0 + 1.0, x)
    capped = lambda_u * cfg.p_t_max / (cfg.eta * lambda_a) * math.exp(-x)
    return inverted + capped


def mean_received_power(cfg: NetworkConfig, lambda_u: float, lambda_a: float) -> float:
    """Mean total received power at a typical aggregator (mW)"""
    _check_densities(lambda_u, lambda_a)
    ratio = lambda_u / lambda_a
    r_c = critical_distance(cfg).r_c
    if math.isinf(r_c):
        return ratio * cfg.p_bar_t

    alpha = cfg.alpha
    pi_la = math.pi * lambda_a
    x = pi_la * r_c ** 2
    inverted = ratio * -math.expm1(-x) * cfg.p_bar_t
    capped = (math.pi * lambda_u * pi_la ** (alpha / 2.0 - 1.0) * cfg.p_t_max
              * upper_incomplete_gamma(1.0 - alpha / 2.0, x))
    return inverted + capped


def mean_na(lambda_u: float, lambda_a: float) -> float:
    """Mean number of transmitters per aggregator cell"""
    _check_densities(lambda_u, lambda_a)
    return lambda_u / lambda_a


def mean_na_within(lambda_u: float, lambda_a: float, d: float) -> float:
    """Mean number of transmitters in a typical cell that lie within distance d of the aggregator"""
    if d < 0:
        raise DomainError(f"distance must be nonnegative, got {d}")
    return mean_na(lambda_u, lambda_a) * -math.expm1(-lambda_a * math.pi * d ** 2)


def second_moment_na(lambda_u: float, lambda_a: float) -> float:
    """E[N_a^2] under the gamma-distributed cell area model"""
    mu = mean_na(lambda_u, lambda_a)
    return mu + LOAD_SPREAD * mu ** 2


def single_stage_energy_density(cfg: NetworkConfig, lambda_u: float, lambda_a: float) -> float:
    """Receive plus transmit energy per unit area for one aggregation stage with t_tx = 1"""
    mu = mean_na(lambda_u, lambda_a)
    receive = lambda_a * mu * (cfg.p_lo + cfg.p_o + cfg.p_rx)
    transmit = lambda_a * (second_moment_na(lambda_u, lambda_a) * cfg.p_lo + mu * cfg.p_tx
                           + mean_uplink_power(cfg, lambda_u, lambda_a))
    return receive + transmit


def direct_transmission_energy(cfg: NetworkConfig) -> float:
    """Energy density when every device transmits straight to its nearest BS"""
    return single_stage_energy_density(cfg, cfg.lam, cfg.lambda_bs)


def stage_cost(cfg: NetworkConfig, plan: StagePlan, k: int) -> float:
    """Energy density c_k(gamma) of stage k ignoring coverage"""
    stage = plan.stage(k)
    lam, gamma, big_k = cfg.lam, plan.gamma, plan.k_total
    gbar = aggregator_sum(gamma, big_k)
    power = mean_uplink_power(cfg, stage.lambda_u, stage.lambda_a)

    if k == big_k:
        last_tx = lam * gamma ** (big_k - 1)
        return lam * (1.0 - gbar) * (cfg.p_c + cfg.lambda_bs / last_tx * power
                                     + (1.0 + LOAD_SPREAD * last_tx / cfg.lambda_bs) * cfg.p_lo)
    if k == 1:
        return lam * ((1.0 - gbar) * cfg.p_c + gamma * power
                      + ((1.0 - gbar) + LOAD_SPREAD * (1.0 - gbar) ** 2 / gamma) * cfg.p_lo)
    return lam * (1.0 - gbar) * (cfg.p_c + gamma * power + (1.0 + LOAD_SPREAD / gamma) * cfg.p_lo)


def total_energy_density(cfg: NetworkConfig, plan: StagePlan,
                         cov: Optional[CoverageVector] = None) -> EnergyBreakdown:
    """Sum of stage costs, each scaled by the probability that data reached that stage"""
    costs = [stage_cost(cfg, plan, k) for k in plan.stages]
    if cov is None:
        return EnergyBreakdown(per_stage=costs, total=math.fsum(costs), coverage_scaled=False)

    if len(cov.p_cov) != plan.k_total:
        raise DomainError(f"Coverage vector has {len(cov.p_cov)} entries for {plan.k_total} stages")
    factors = [1.0] + list(cov.p_cov[1:])
    per_stage = [factor * cost for factor, cost in zip(factors, costs)]
    return EnergyBreakdown(per_stage=per_stage, total=math.fsum(per_stage), coverage_scaled=True)


def mode_energy_density(cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode,
                        cov: Optional[CoverageVector] = None) -> EnergyBreakdown:
    """total_energy_density on the plan the transmission mode runs on"""
    return total_energy_density(cfg, transmission_plan(cfg, plan, mode), cov)


def upper_bound_energy(cfg: NetworkConfig, plan: StagePlan) -> float:
    """Energy density with every link assumed successful"""
    return total_energy_density(cfg, plan).total


def golden_section(f: Callable[[float], float], lo: float, hi: float,
                   tol: float = GAMMA_TOL, max_iterations: int = 200) -> Dict[str, float]:
    """Golden-section minimization of a unimodal function on [lo, hi]"""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - ratio * (hi - lo)
    x2 = lo + ratio * (hi - lo)
    f1, f2 = f(x1), f(x2)
    iteration = 0
    while abs(hi - lo) > tol and iteration < max_iterations:
        if f2 > f1:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - ratio * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + ratio * (hi - lo)
            f2 = f(x2)
        iteration += 1

    argmin, minimum = (x1, f1) if f1 <= f2 else (x2, f2)
    return dict(argmin=argmin, minimum=minimum, iterations=iteration,
                converged=abs(hi - lo) <= tol and math.isfinite(minimum))


def feasible_bracket(cfg: NetworkConfig, k_total: int,
                     bracket: Tuple[float, float] = GAMMA_BRACKET,
                     mode: TransmissionMode = TransmissionMode.SEQUENTIAL) -> Tuple[float, float]:
    """Part of the search bracket where the last stage has at least as many transmitters as BSs"""
    lo, hi = bracket
    if k_total > 1:
        # half-duplex thins by gamma^2 per level
        levels = 2 * (k_total - 1) if mode == TransmissionMode.HALF_DUPLEX else k_total - 1
        lo = max(lo, (cfg.lambda_bs / cfg.lam) ** (1.0 / levels) * (1.0 + 1e-12))
    if lo >= hi:
        raise DegeneratePlanError(f"No feasible aggregator fraction for K={k_total}",
                                  lower=lo, upper=hi)
    return lo, hi


def optimize_gamma(cfg: NetworkConfig, k_total: int, cov_rule: Optional[CoverageRule] = None,
                   bracket: Tuple[float, float] = GAMMA_BRACKET,
                   grid_points: int = GRID_POINTS, tol: float = GAMMA_TOL,
                   mode: TransmissionMode = TransmissionMode.SEQUENTIAL) -> GammaOptimum:
    """Aggregator fraction minimizing the total energy density for K stages

    A log-uniform grid locates the basin and golden-section search refines it.
    Ties on the grid go to the largest gamma, so a flat objective (K = 1)
    reports the top of the bracket. Energy is evaluated on the plan the mode
    runs on; cov_rule receives the plan built at the searched gamma.
    """
    lo, hi = feasible_bracket(cfg, k_total, bracket, mode)
    if lo > bracket[0]:
        logger.info(f"K={k_total}: search bracket raised to gamma >= {lo:.4g} to keep the plan non-degenerate")

    def energy_at(gamma: float) -> EnergyBreakdown:
        plan = build_stage_plan(cfg, gamma, k_total)
        return mode_energy_density(cfg, plan, mode, cov_rule(plan) if cov_rule else None)

    def objective(gamma: float) -> float:
        return energy_at(gamma).total

    grid = np.geomspace(lo, hi, grid_points)
    values = np.array([objective(g) for g in grid])
    best = float(values.min())
    ties = np.flatnonzero(values <= best * (1.0 + 1e-12))
    index = int(ties[-1])

    left = grid[max(index - 1, 0)]
    right = grid[min(index + 1, grid_points - 1)]
    refined = golden_section(objective, left, right, tol=tol)
    if not refined["converged"]:
        raise ConvergenceError(f"Golden-section refinement failed for K={k_total}",
                               left=left, right=right, iterations=refined["iterations"])

    gamma_opt = refined["argmin"] if refined["minimum"] < best else float(grid[index])
    precondition = _last_stage_cost_nondecreasing(cfg, k_total, grid, mode)
    if not precondition:
        logger.warning(f"K={k_total}: last-stage cost is not nondecreasing in gamma on "
                       f"[{lo:.4g}, {hi:.4g}]; monotonicity of gamma_opt in K is not guaranteed")

    energy = energy_at(gamma_opt)
    logger.info(f"K={k_total}: gamma_opt={gamma_opt:.6g}, energy={energy.total:.6g}")
    return GammaOptimum(gamma_opt=gamma_opt, energy=energy, converged=True,
                        precondition_holds=precondition, iterations=refined["iterations"])


def _last_stage_cost_nondecreasing(cfg: NetworkConfig, k_total: int, grid: np.ndarray,
                                   mode: TransmissionMode) -> bool:
    """Check that c_K(gamma) does not decrease anywhere on the search grid"""
    costs = np.array([stage_cost(cfg, transmission_plan(cfg, build_stage_plan(cfg, g, k_total), mode), k_total)
                      for g in grid])
    return bool(np.all(np.diff(costs) >= -1e-9 * np.abs(costs[:-1])))
