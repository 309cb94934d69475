"""
Command handlers behind the CLI. Each one computes a table, writes it with
its manifest into a run directory and returns the table and its path.
"""

import math
import logging
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import Config, REGION_HALF_WIDTH, apply_p_lo_variant
from .coverage import (coverage_rule, joint_coverage_vector, laplace_intra_stage, sir_coverage_mode,
                       thinning_probabilities)
from .energy import (direct_transmission_energy, feasible_bracket, mean_uplink_power, mode_energy_density,
                     optimize_gamma, second_moment_na)
from .errors import DomainError
from .hops import hop_bounds
from .mc import (laplace_functional_samples, load_samples, measure_energy_density, measure_sir_rate_coverage,
                 measure_stage_correlation, merge_coverage, pa_power_samples, pmf_chi_square, replicate)
from .model import build_stage_plan, thinning_probability, transmission_plan
from .rate import load_pmf, rate_coverage_curve, rate_coverage_per_stage
from .run_manager import RunManager
from .schemas import McEstimate, NetworkConfig, StagePlan, TransmissionMode

# Configure logging
logger = logging.getLogger(__name__)

EXPERIMENTS = ('pa-power', 'load', 'correlation', 'coverage', 'energy', 'laplace')

Output = Tuple[pd.DataFrame, str]


def _finish(runs: RunManager, manifest, name: str, frame: pd.DataFrame, cfg: NetworkConfig,
            plot: Optional[Dict] = None) -> Output:
    path = runs.write_csv(manifest, name, frame, cfg)
    if plot:
        runs.write_plot_script(manifest, path, **plot)
    runs.finish_run(manifest)
    return frame, path


def _plan_for(cfg: NetworkConfig, k_total: int, gamma: Optional[float]) -> StagePlan:
    """Stage plan at the given gamma, or at the energy-optimal gamma when none is given"""
    if gamma is None:
        gamma = optimize_gamma(cfg, k_total).gamma_opt
        logger.info(f"Using gamma_opt={gamma:.6g} for K={k_total}")
    return build_stage_plan(cfg, gamma, k_total)


def _proportion_half_width(p: float, n: int) -> float:
    if n <= 0 or math.isnan(p):
        return float('nan')
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def cmd_energy_sweep(cfg: NetworkConfig, k_list: Sequence[int], gamma_grid: Sequence[float], runs: RunManager,
                     p_lo_variant: Optional[str] = None, mode: Optional[TransmissionMode] = None,
                     t: Optional[float] = None, plot: bool = False) -> Output:
    """Total energy density over gamma for each K, with the optimum marked"""
    try:
        if p_lo_variant:
            cfg = cfg.updated(**apply_p_lo_variant(cfg.model_dump(), p_lo_variant))
        cov_rule = coverage_rule(cfg, mode, t) if mode is not None and t is not None else None
        manifest = runs.start_run('energy-sweep', cfg, arguments=dict(
            k_list=list(k_list), gamma_grid=list(gamma_grid), p_lo_variant=p_lo_variant,
            mode=mode.value if mode else None, t=t))

        e_direct = direct_transmission_energy(cfg)
        energy_mode = mode or TransmissionMode.SEQUENTIAL
        rows = []
        for k_total in k_list:
            lo, hi = feasible_bracket(cfg, k_total, mode=energy_mode)
            optimum = optimize_gamma(cfg, k_total, cov_rule, mode=energy_mode)
            points = [(g, False) for g in gamma_grid if lo <= g <= hi]
            skipped = len(gamma_grid) - len(points)
            if skipped:
                logger.info(f"K={k_total}: skipped {skipped} gamma values outside [{lo:.4g}, {hi:.4g}]")
            points.append((optimum.gamma_opt, True))
            for gamma, is_opt in sorted(points):
                plan = build_stage_plan(cfg, gamma, k_total)
                energy = mode_energy_density(cfg, plan, energy_mode, cov_rule(plan) if cov_rule else None)
                rows.append(dict(K=k_total, gamma=gamma, E_total=energy.total, is_opt=is_opt,
                                 E_direct=e_direct, precondition=optimum.precondition_holds))

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, 'energy_sweep', frame, cfg,
                       dict(x='gamma', columns=['E_total'], title='Total energy density', logscale='y')
                       if plot else None)
    except Exception as e:
        logger.error(f"Failed to run energy sweep: {e}")
        raise


def cmd_coverage(cfg: NetworkConfig, mode: TransmissionMode, t_grid: Sequence[float], k_total: int,
                 runs: RunManager, gamma: Optional[float] = None, phase: str = "odd",
                 plot: bool = False) -> Output:
    """Per-stage and end-to-end SIR coverage over a threshold grid"""
    try:
        plan = _plan_for(cfg, k_total, gamma)
        manifest = runs.start_run('coverage', cfg, arguments=dict(
            mode=mode.value, t_grid=list(t_grid), k=k_total, gamma=plan.gamma, phase=phase))

        rows = []
        for t in t_grid:
            coverage = sir_coverage_mode(cfg, plan, mode, t, phase)
            row = dict(T=t, P_cov=coverage.total)
            row.update({f"P_stage{k}": p for k, p in zip(plan.stages, coverage.per_stage)})
            rows.append(row)

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, f'coverage_{mode.value}_K{k_total}', frame, cfg,
                       dict(x='T', columns=['P_cov'], title=f'SIR coverage ({mode.value}, K={k_total})',
                            logscale='x') if plot else None)
    except Exception as e:
        logger.error(f"Failed to compute coverage: {e}")
        raise


def cmd_rate_cdf(cfg: NetworkConfig, modes: Sequence[TransmissionMode], rho_grid: Sequence[float],
                 k_list: Sequence[int], pmax_ratios: Sequence[float], runs: RunManager,
                 gamma: Optional[float] = None, l_max: Optional[int] = None, simulate: bool = False,
                 n_deployments: int = Config.SIM_DEPLOYMENTS, seed: int = Config.SEED,
                 region: float = REGION_HALF_WIDTH, workers: int = Config.WORKERS, plot: bool = False) -> Output:
    """Rate coverage blocks per (mode, K, P_Tmax/P_bar_T), optionally with simulated columns"""
    try:
        manifest = runs.start_run('rate-cdf', cfg, seed if simulate else None, arguments=dict(
            modes=[m.value for m in modes], rho_grid=list(rho_grid), k_list=list(k_list),
            pmax_ratios=list(pmax_ratios), gamma=gamma, l_max=l_max, simulate=simulate,
            n_deployments=n_deployments if simulate else None, region=region if simulate else None))

        rows = []
        for ratio in pmax_ratios:
            block_cfg = cfg.updated(p_t_max=ratio * cfg.p_bar_t)
            for k_total in k_list:
                plan = _plan_for(block_cfg, k_total, gamma)
                for mode in modes:
                    curve = rate_coverage_curve(block_cfg, plan, mode, rho_grid, l_max)
                    simulated = None
                    if simulate:
                        mode_plan = transmission_plan(block_cfg, plan, mode)
                        experiment = partial(measure_sir_rate_coverage, cfg=block_cfg, plan=mode_plan, mode=mode,
                                             thresholds=list(rho_grid), kind='rate')
                        simulated = merge_coverage(replicate(experiment, block_cfg, mode_plan, n_deployments,
                                                             seed, region, workers))
                    for i, (rho, p) in enumerate(zip(rho_grid, curve)):
                        row = dict(mode=mode.value, K=k_total, pmax_ratio=ratio, gamma=plan.gamma,
                                   rho=rho, P_rate=p)
                        if simulated is not None:
                            p_mc = simulated.joint[i]
                            row.update(mc_P_rate=p_mc,
                                       mc_half_width=_proportion_half_width(p_mc, simulated.n_samples),
                                       gap=p - p_mc)
                        rows.append(row)

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, 'rate_cdf', frame, cfg,
                       dict(x='rho', columns=['P_rate'], title='Rate coverage', logscale='x') if plot else None)
    except Exception as e:
        logger.error(f"Failed to compute rate coverage: {e}")
        raise


def cmd_hops(cfg: NetworkConfig, epsilon_grid: Sequence[float], t_list: Sequence[float], p_r_min: float,
             runs: RunManager, gamma: Optional[float] = None, plot: bool = False) -> Output:
    """K_U and K_L over the outage budget for each SIR threshold"""
    try:
        manifest = runs.start_run('hops', cfg, arguments=dict(
            epsilon_grid=list(epsilon_grid), t_list=list(t_list), p_r_min=p_r_min, gamma=gamma))
        rows = []
        for t in t_list:
            for epsilon in epsilon_grid:
                bounds = hop_bounds(cfg, epsilon, t, p_r_min, gamma)
                rows.append(dict(epsilon=epsilon, T=t, K_U=bounds.k_upper, K_L=bounds.k_lower,
                                 ordered=bounds.ordered))

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, 'hops', frame, cfg,
                       dict(x='epsilon', columns=['K_U', 'K_L'], title='Number of stages') if plot else None)
    except Exception as e:
        logger.error(f"Failed to compute hop bounds: {e}")
        raise


def cmd_tradeoff(cfg: NetworkConfig, k_total: int, modes: Sequence[TransmissionMode], grid: Sequence[float],
                 runs: RunManager, kind: str = 'sir', gamma: Optional[float] = None, phase: str = "odd",
                 l_max: Optional[int] = None, plot: bool = False) -> Output:
    """Outage against coverage-scaled energy density, per mode, over SIR (kind='sir') or rate thresholds"""
    try:
        plan = _plan_for(cfg, k_total, gamma)
        manifest = runs.start_run('tradeoff', cfg, arguments=dict(
            k=k_total, modes=[m.value for m in modes], grid=list(grid), kind=kind,
            gamma=plan.gamma, phase=phase, l_max=l_max))
        column = 'T' if kind == 'sir' else 'rho'
        rows = []
        for mode in modes:
            for threshold in grid:
                if kind == 'sir':
                    coverage = sir_coverage_mode(cfg, plan, mode, threshold, phase)
                else:
                    coverage = rate_coverage_per_stage(cfg, plan, mode, threshold, l_max, phase)
                energy = mode_energy_density(cfg, plan, mode, joint_coverage_vector(coverage))
                rows.append({'mode': mode.value, column: threshold, 'outage': 1.0 - coverage.total,
                             'energy': energy.total})

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, f'tradeoff_K{k_total}', frame, cfg,
                       dict(x='outage', columns=['energy'], title=f'Outage-energy tradeoff (K={k_total})')
                       if plot else None)
    except Exception as e:
        logger.error(f"Failed to compute tradeoff: {e}")
        raise


def _estimate_columns(prefix: str, estimate: McEstimate) -> Dict[str, float]:
    return {f'{prefix}_mc': estimate.mean, f'{prefix}_half_width': estimate.half_width_95,
            f'{prefix}_n': estimate.n_samples}


def _simulate_pa_power(cfg, plan, n_deployments, seed, region, workers) -> List[Dict]:
    rows = []
    for k in plan.stages:
        samples = replicate(partial(pa_power_samples, cfg=cfg, stage=k), cfg, plan, n_deployments,
                            seed, region, workers)
        estimate = McEstimate.from_samples(np.concatenate(samples))
        stage = plan.stage(k)
        row = dict(stage=k, analytic=mean_uplink_power(cfg, stage.lambda_u, stage.lambda_a))
        row.update(_estimate_columns('power', estimate))
        rows.append(row)
    return rows


def _simulate_load(cfg, plan, n_deployments, seed, region, workers) -> List[Dict]:
    rows = []
    for k in plan.stages:
        loads = np.concatenate(replicate(partial(load_samples, stage=k), cfg, plan, n_deployments,
                                         seed, region, workers))
        mean = McEstimate.from_samples(loads)
        second = McEstimate.from_samples(loads.astype(float) ** 2)
        stage = plan.stage(k)
        pmf = load_pmf(stage.lambda_u, stage.lambda_a, max(int(loads.max()), Config.L_MAX),
                       max_truncation=1.0)
        histogram = np.bincount(loads) / loads.size
        row = dict(stage=k, mean_analytic=stage.mean_na, second_analytic=second_moment_na(
            stage.lambda_u, stage.lambda_a), p_empty_analytic=1.0 - thinning_probability(stage.mean_na),
            p_empty_mc=float(histogram[0]), chi_square=pmf_chi_square(histogram, pmf.probs))
        row.update(_estimate_columns('mean', mean))
        row.update(_estimate_columns('second', second))
        rows.append(row)
    return rows


def _simulate_coverage(cfg, plan, modes, thresholds, n_deployments, seed, region, workers, phase) -> List[Dict]:
    rows = []
    for mode in modes:
        mode_plan = transmission_plan(cfg, plan, mode)
        experiment = partial(measure_sir_rate_coverage, cfg=cfg, plan=mode_plan, mode=mode,
                             thresholds=list(thresholds), phase=phase)
        merged = merge_coverage(replicate(experiment, cfg, mode_plan, n_deployments, seed, region, workers))
        for i, t in enumerate(thresholds):
            analytic = sir_coverage_mode(cfg, plan, mode, t, phase).total
            rows.append(dict(mode=mode.value, T=t, analytic=analytic, coverage_mc=merged.joint[i],
                             coverage_half_width=_proportion_half_width(merged.joint[i], merged.n_samples),
                             coverage_n=merged.n_samples))
    return rows


def _simulate_energy(cfg, plan, modes, t, n_deployments, seed, region, workers, phase) -> List[Dict]:
    rows = []
    for mode in modes:
        mode_plan = transmission_plan(cfg, plan, mode)
        experiment = partial(measure_energy_density, cfg=cfg, plan=mode_plan, mode=mode, t=t, phase=phase)
        results = replicate(experiment, cfg, mode_plan, n_deployments, seed, region, workers)
        cov = joint_coverage_vector(sir_coverage_mode(cfg, plan, mode, t, phase)) if t > 0 else None
        analytic = mode_energy_density(cfg, plan, mode, cov)
        for k in plan.stages:
            values = np.array([r.per_stage[k - 1] for r in results])
            rows.append(dict(mode=mode.value, stage=k, analytic=analytic.per_stage[k - 1],
                             energy_mc=float(values.mean()),
                             energy_half_width=1.96 * float(values.std(ddof=1)) / math.sqrt(values.size)
                             if values.size > 1 else float('nan'),
                             energy_n=int(values.size)))
    return rows


def _simulate_laplace(cfg, plan, s_grid, n_deployments, seed, region, workers) -> List[Dict]:
    rows = []
    p_th = thinning_probabilities(plan)
    for k in plan.stages:
        for s in s_grid:
            samples = replicate(partial(laplace_functional_samples, cfg=cfg, stage=k, s=s), cfg, plan,
                                n_deployments, seed, region, workers)
            estimate = McEstimate.from_samples(np.concatenate(samples))
            row = dict(stage=k, s=s, analytic=laplace_intra_stage(cfg, plan, k, p_th, s).value)
            row.update(_estimate_columns('laplace', estimate))
            rows.append(row)
    return rows


def cmd_simulate(cfg: NetworkConfig, experiment: str, runs: RunManager, seed: int = Config.SEED,
                 n_deployments: int = Config.SIM_DEPLOYMENTS, k_total: int = 1, gamma: Optional[float] = None,
                 region: float = REGION_HALF_WIDTH, workers: int = Config.WORKERS,
                 modes: Sequence[TransmissionMode] = (TransmissionMode.SEQUENTIAL,),
                 grid: Sequence[float] = (1.0,), gamma_grid: Sequence[float] = (0.05, 0.1, 0.2, 0.3),
                 phase: str = "odd", plot: bool = False) -> Output:
    """Monte Carlo experiment next to its analytic prediction

    grid holds SIR thresholds for 'coverage', the single threshold for
    'energy' (0 counts every link as successful) and Laplace arguments for
    'laplace'.
    """
    try:
        if experiment not in EXPERIMENTS:
            raise DomainError(f"Unknown experiment '{experiment}', expected one of {', '.join(EXPERIMENTS)}")
        manifest = runs.start_run(f'simulate-{experiment}', cfg, seed, arguments=dict(
            n_deployments=n_deployments, k=k_total, gamma=gamma, region=region,
            modes=[m.value for m in modes], grid=list(grid), gamma_grid=list(gamma_grid), phase=phase))

        if experiment == 'correlation':
            rows = [row.model_dump() for row in
                    measure_stage_correlation(cfg, gamma_grid, k_total, n_deployments, seed)]
            plot_spec = dict(x='gamma', columns=['rho'], title='Inter-stage load correlation')
        else:
            plan = _plan_for(cfg, k_total, gamma)
            if experiment == 'pa-power':
                rows = _simulate_pa_power(cfg, plan, n_deployments, seed, region, workers)
                plot_spec = dict(x='stage', columns=['analytic', 'power_mc'], title='PA power per cell')
            elif experiment == 'load':
                rows = _simulate_load(cfg, plan, n_deployments, seed, region, workers)
                plot_spec = dict(x='stage', columns=['mean_analytic', 'mean_mc'], title='Mean cell load')
            elif experiment == 'coverage':
                rows = _simulate_coverage(cfg, plan, modes, grid, n_deployments, seed, region, workers, phase)
                plot_spec = dict(x='T', columns=['analytic', 'coverage_mc'], title='SIR coverage', logscale='x')
            elif experiment == 'energy':
                rows = _simulate_energy(cfg, plan, modes, grid[0], n_deployments, seed, region, workers, phase)
                plot_spec = dict(x='stage', columns=['analytic', 'energy_mc'], title='Energy density per stage')
            else:
                rows = _simulate_laplace(cfg, plan, grid, n_deployments, seed, region, workers)
                plot_spec = dict(x='s', columns=['analytic', 'laplace_mc'], title='Laplace functional',
                                 logscale='x')

        frame = pd.DataFrame(rows)
        return _finish(runs, manifest, f'simulate_{experiment.replace("-", "_")}', frame, cfg,
                       plot_spec if plot else None)
    except Exception as e:
        logger.error(f"Failed to run simulation {experiment}: {e}")
        raise
