"""
Monte Carlo simulator used to check the analytic model.

A deployment is a PPP of devices in the square [-R, R]^2, split
independently into transmit-only devices and stage-k aggregators, plus an
independent PPP of BSs. Every stage associates its transmitters with the
nearest receiver of the next tier. Statistics are collected only at
receivers farther than 3/sqrt(pi lambda_a(k)) from the region boundary.

Each cell runs a wrap-around TDMA schedule: in slot j the active member of a
cell with n members is the (j mod n)-th device of a random permutation, so
every nonempty cell transmits in every slot and each device is evaluated in
its own slot j < n.
"""

import math
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .config import Config, REGION_HALF_WIDTH
from .coverage import active_stages, phase_stages
from .errors import DomainError
from .model import build_stage_plan, tier_masses
from .rate import time_sharing_factor
from .schemas import (CorrelationRow, Deployment, EmpiricalCoverage, EnergyBreakdown, McEstimate,
                      NetworkConfig, StagePlan, TransmissionMode)

# Configure logging
logger = logging.getLogger(__name__)

GUARD_CELLS = 3.0
CHUNK_SIZE = 256
MIN_RECEIVERS = 10
MIN_PAIRS = 30
MAX_CORRELATION_POINTS = 200_000


def transmit_power(cfg: NetworkConfig, distance: np.ndarray) -> np.ndarray:
    """Truncated channel inversion: min(P_Tmax, P_bar_T d^alpha)"""
    return np.minimum(cfg.p_t_max, cfg.p_bar_t * np.asarray(distance, dtype=float) ** cfg.alpha)


def _uniform_points(rng: np.random.Generator, density: float, half_width: float) -> np.ndarray:
    count = rng.poisson(density * (2.0 * half_width) ** 2)
    return rng.uniform(-half_width, half_width, size=(count, 2))


def sample_deployment(cfg: NetworkConfig, plan: StagePlan, region: float = REGION_HALF_WIDTH,
                      seed: int = Config.SEED) -> Deployment:
    """Draw devices, aggregator tiers, BSs and nearest-receiver associations"""
    if region <= 0:
        raise DomainError(f"region half-width must be positive, got {region}")
    area = (2.0 * region) ** 2
    if plan.lambda_a[-1] * area < MIN_RECEIVERS:
        logger.warning(f"Region R={region:g} km holds only {plan.lambda_a[-1] * area:.3g} "
                       f"last-stage receivers on average")

    rng = np.random.default_rng(seed)
    points = _uniform_points(rng, cfg.lam, region)
    masses = np.asarray(tier_masses(plan))
    tier_of = rng.choice(plan.k_total, size=len(points), p=masses / masses.sum())
    bs_points = _uniform_points(rng, cfg.lambda_bs, region)

    tx_index, rx_points, assoc, distance = [], [], [], []
    for k in plan.stages:
        senders = np.flatnonzero(tier_of == (0 if k == 1 else k - 1))
        receivers = points[tier_of == k] if k < plan.k_total else bs_points
        if len(receivers) == 0:
            raise DomainError(f"Degenerate region: no stage-{k} receivers in R={region:g} km",
                              seed=seed, stage=k)
        dist, nearest = np.empty(0), np.empty(0, dtype=int)
        if len(senders):
            dist, nearest = cKDTree(receivers).query(points[senders])
        tx_index.append(senders)
        rx_points.append(receivers)
        assoc.append(np.asarray(nearest, dtype=int))
        distance.append(np.asarray(dist, dtype=float))

    logger.debug(f"Deployment seed={seed}: {len(points)} devices, {len(bs_points)} BSs")
    return Deployment(region_half_width=region, seed=seed, points=points, tier_of=tier_of,
                      bs_points=bs_points, tx_index=tx_index, rx_points=rx_points,
                      assoc=assoc, distance=distance)


def measurement_rng(dep: Deployment) -> np.random.Generator:
    """Fading and scheduling stream tied to the deployment seed"""
    return np.random.default_rng([dep.seed, 1])


def guard_distance(dep: Deployment, k: int, guard_scale: float = 1.0) -> float:
    density = len(dep.rx_points[k - 1]) / dep.area
    return guard_scale * GUARD_CELLS / math.sqrt(math.pi * density)


def interior_receivers(dep: Deployment, k: int, guard_scale: float = 1.0) -> np.ndarray:
    """Mask of stage-k receivers inside the guard region"""
    inner = dep.region_half_width - guard_distance(dep, k, guard_scale)
    if inner <= 0:
        logger.warning(f"Stage {k}: guard region leaves no interior in R={dep.region_half_width:g} km")
        return np.zeros(len(dep.rx_points[k - 1]), dtype=bool)
    return np.all(np.abs(dep.rx_points[k - 1]) <= inner, axis=1)


def interior_area(dep: Deployment, k: int, guard_scale: float = 1.0) -> float:
    inner = max(dep.region_half_width - guard_distance(dep, k, guard_scale), 0.0)
    return (2.0 * inner) ** 2


def pa_power_samples(dep: Deployment, cfg: NetworkConfig, stage: int = 1) -> np.ndarray:
    """Total PA power of each interior stage-k cell"""
    i = stage - 1
    weights = transmit_power(cfg, dep.distance[i]) / cfg.eta
    totals = np.bincount(dep.assoc[i], weights=weights, minlength=len(dep.rx_points[i]))
    return totals[interior_receivers(dep, stage)]


def measure_pa_power(dep: Deployment, cfg: NetworkConfig, stage: int = 1) -> McEstimate:
    return McEstimate.from_samples(pa_power_samples(dep, cfg, stage))


def load_samples(dep: Deployment, stage: int = 1) -> np.ndarray:
    return dep.loads(stage)[interior_receivers(dep, stage)]


def load_moments(loads: np.ndarray) -> Tuple[McEstimate, McEstimate, np.ndarray]:
    """Mean, second moment and normalized histogram of cell loads"""
    loads = np.asarray(loads, dtype=int)
    histogram = np.bincount(loads) / max(len(loads), 1)
    return (McEstimate.from_samples(loads), McEstimate.from_samples(loads.astype(float) ** 2), histogram)


def measure_load_moments(dep: Deployment, stage: int = 1) -> Tuple[McEstimate, McEstimate, np.ndarray]:
    return load_moments(load_samples(dep, stage))


def pmf_chi_square(empirical: Sequence[float], analytic: Sequence[float]) -> float:
    """Chi-square distance of an empirical histogram from a model PMF over the model's support"""
    size = len(analytic)
    observed = np.zeros(size)
    values = np.asarray(empirical, dtype=float)[:size]
    observed[:len(values)] = values
    expected = np.asarray(analytic, dtype=float)
    positive = expected > 0
    return float(np.sum((observed[positive] - expected[positive]) ** 2 / expected[positive]))


class _Schedule:
    """Random TDMA order inside every cell of one stage"""

    def __init__(self, assoc: np.ndarray, n_cells: int, rng: np.random.Generator):
        self.counts = np.bincount(assoc, minlength=n_cells)
        self.order = np.lexsort((rng.random(len(assoc)), assoc))
        self.starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))
        self.rank = np.empty(len(assoc), dtype=int)
        self.rank[self.order] = np.arange(len(assoc)) - np.repeat(self.starts, self.counts)
        self.busy = np.flatnonzero(self.counts)

    def active(self, slot: int) -> Tuple[np.ndarray, np.ndarray]:
        """(cell, transmitter) pairs transmitting in the slot"""
        cells = self.busy
        members = self.order[self.starts[cells] + slot % self.counts[cells]]
        return cells, members


def _stage_sir(dep: Deployment, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode, k: int,
               schedules: List[_Schedule], powers: List[np.ndarray], rng: np.random.Generator,
               fading: bool, guard_scale: float) -> np.ndarray:
    """SIR of every stage-k transmitter whose receiver is interior, nan elsewhere"""
    i = k - 1
    alpha = cfg.alpha
    sir = np.full(len(dep.tx_index[i]), np.nan)
    measured = interior_receivers(dep, k, guard_scale)[dep.assoc[i]]
    if not measured.any():
        return sir

    coactive = [k] + active_stages(plan, mode, k)
    tx_points = [dep.points[index] for index in dep.tx_index]
    slots = int(schedules[i].counts[np.unique(dep.assoc[i][measured])].max())

    for slot in range(slots):
        tagged = np.flatnonzero(measured & (schedules[i].rank == slot))
        if tagged.size == 0:
            continue

        positions, tx_power, cell_of = [], [], []
        for l in coactive:
            cells, members = schedules[l - 1].active(slot)
            positions.append(tx_points[l - 1][members])
            tx_power.append(powers[l - 1][members])
            # only same-stage interferers can be the tagged device's own cell
            cell_of.append(cells if l == k else np.full(len(cells), -1))
        positions = np.concatenate(positions)
        tx_power = np.concatenate(tx_power)
        cell_of = np.concatenate(cell_of)

        for start in range(0, tagged.size, CHUNK_SIZE):
            chunk = tagged[start:start + CHUNK_SIZE]
            own_cell = dep.assoc[i][chunk]
            receivers = dep.rx_points[i][own_cell]
            dist = np.linalg.norm(receivers[:, None, :] - positions[None, :, :], axis=2)
            gain = np.zeros_like(dist)
            np.power(dist, -alpha, out=gain, where=dist > 0)
            gain *= tx_power[None, :]
            gain[cell_of[None, :] == own_cell[:, None]] = 0.0
            if fading:
                gain *= rng.exponential(size=gain.shape)
            interference = gain.sum(axis=1)

            signal = powers[i][chunk] * dep.distance[i][chunk] ** -alpha
            if fading:
                signal = signal * rng.exponential(size=chunk.size)
            sir[chunk] = np.divide(signal, interference, out=np.full(chunk.size, np.inf),
                                   where=interference > 0)
    return sir


def simulate_links(dep: Deployment, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode,
                   rng: Optional[np.random.Generator] = None, fading: bool = True, phase: str = "odd",
                   guard_scale: float = 1.0) -> Tuple[List[int], List[np.ndarray]]:
    """Evaluated stages and the per-transmitter SIR of each stage (nan where not measured)"""
    if plan.k_total != dep.k_total:
        raise DomainError(f"Plan has {plan.k_total} stages, deployment has {dep.k_total}")
    rng = rng if rng is not None else measurement_rng(dep)
    evaluated = phase_stages(plan, phase) if mode == TransmissionMode.HALF_DUPLEX else list(plan.stages)
    schedules = [_Schedule(dep.assoc[i], len(dep.rx_points[i]), rng) for i in range(dep.k_total)]
    powers = [transmit_power(cfg, d) for d in dep.distance]

    sir = [np.full(len(index), np.nan) for index in dep.tx_index]
    for k in evaluated:
        sir[k - 1] = _stage_sir(dep, cfg, plan, mode, k, schedules, powers, rng, fading, guard_scale)
    return evaluated, sir


def _link_rates(dep: Deployment, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode,
                sir: List[np.ndarray]) -> List[np.ndarray]:
    """W / (N_a f) log2(1 + SIR), f the time-sharing factor of the mode"""
    factor = time_sharing_factor(plan, mode)
    rates = []
    for i, values in enumerate(sir):
        load = dep.loads(i + 1)[dep.assoc[i]]
        rates.append(cfg.w / (np.maximum(load, 1) * factor) * np.log2(1.0 + values))
    return rates


def _paths(dep: Deployment) -> List[np.ndarray]:
    """Per stage, the transmitter index carrying each stage-1 device's data"""
    hops = [np.arange(len(dep.tx_index[0]))]
    for i in range(1, dep.k_total):
        # stage-i receivers are the stage-(i+1) transmitters in the same order
        hops.append(dep.assoc[i - 1][hops[-1]])
    return hops


def _path_metrics(metrics: List[np.ndarray], evaluated: List[int], paths: List[np.ndarray]):
    traced = {k: metrics[k - 1][paths[k - 1]] for k in evaluated}
    valid = np.ones(len(paths[0]), dtype=bool)
    for values in traced.values():
        valid &= ~np.isnan(values)
    return traced, valid


def measure_sir_rate_coverage(dep: Deployment, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode,
                              thresholds: Sequence[float], rng: Optional[np.random.Generator] = None,
                              kind: str = "sir", fading: bool = True, phase: str = "odd",
                              guard_scale: float = 1.0) -> EmpiricalCoverage:
    """Empirical per-stage and end-to-end SIR or rate coverage

    The joint value is the fraction of stage-1 devices whose whole path has
    interior receivers and succeeds at every evaluated stage.
    """
    if kind not in ("sir", "rate"):
        raise DomainError(f"Unknown coverage kind '{kind}'")
    thresholds = [float(value) for value in thresholds]
    if not thresholds:
        raise DomainError("at least one threshold is needed")

    evaluated, sir = simulate_links(dep, cfg, plan, mode, rng, fading, phase, guard_scale)
    metrics = _link_rates(dep, cfg, plan, mode, sir) if kind == "rate" else sir
    grid = np.asarray(thresholds)

    per_stage = []
    for k in plan.stages:
        values = metrics[k - 1]
        values = values[~np.isnan(values)]
        if k not in evaluated or values.size == 0:
            per_stage.append([1.0] * len(thresholds))
            continue
        per_stage.append([float(x) for x in (values[:, None] > grid[None, :]).mean(axis=0)])

    traced, valid = _path_metrics(metrics, evaluated, _paths(dep))
    n_samples = int(valid.sum())
    success = np.ones((n_samples, len(thresholds)), dtype=bool)
    for values in traced.values():
        success &= values[valid][:, None] > grid[None, :]
    joint = [float(x) for x in success.mean(axis=0)] if n_samples else [float("nan")] * len(thresholds)

    mean_duration = None
    if kind == "rate" and n_samples:
        end_to_end = np.min(np.stack([values[valid] for values in traced.values()]), axis=0)
        with np.errstate(divide="ignore"):
            inverse = np.minimum(1.0 / end_to_end, 1.0 / thresholds[0])
        mean_duration = float(cfg.m_payload * plan.k_total * inverse.mean())

    logger.debug(f"Deployment {dep.seed}: {mode.value} {kind} coverage over {n_samples} paths")
    return EmpiricalCoverage(mode=mode, kind=kind, thresholds=thresholds, per_stage=per_stage,
                             joint=joint, n_samples=n_samples, mean_duration=mean_duration)


def merge_coverage(results: Sequence[EmpiricalCoverage]) -> EmpiricalCoverage:
    """Pool per-deployment coverage curves weighted by their path counts"""
    if not results:
        raise DomainError("nothing to merge")
    weights = np.array([r.n_samples for r in results], dtype=float)
    if weights.sum() == 0:
        weights = np.ones(len(results))
    weights = weights / weights.sum()
    first = results[0]
    joint = np.nansum([w * np.asarray(r.joint) for w, r in zip(weights, results)], axis=0)
    per_stage = np.sum([w * np.asarray(r.per_stage) for w, r in zip(weights, results)], axis=0)
    durations = [(w, r.mean_duration) for w, r in zip(weights, results) if r.mean_duration is not None]
    mean_duration = None
    if durations:
        total = sum(w for w, _ in durations)
        mean_duration = float(sum(w * d for w, d in durations) / total) if total > 0 else None
    return EmpiricalCoverage(mode=first.mode, kind=first.kind, thresholds=first.thresholds,
                             per_stage=per_stage.tolist(), joint=joint.tolist(),
                             n_samples=sum(r.n_samples for r in results), mean_duration=mean_duration)


def _upstream_success(metrics: List[np.ndarray], evaluated: List[int], paths: List[np.ndarray],
                      t: float, k_total: int) -> List[float]:
    """Fraction of measured paths that succeeded on every evaluated stage before k"""
    traced, valid = _path_metrics(metrics, evaluated, paths)
    if not valid.any():
        return [1.0] * k_total
    reached = np.ones(int(valid.sum()), dtype=bool)
    factors = []
    for k in range(1, k_total + 1):
        factors.append(float(reached.mean()))
        if k in traced:
            reached &= traced[k][valid] > t
    return factors


def measure_energy_density(dep: Deployment, cfg: NetworkConfig, plan: StagePlan, mode: TransmissionMode,
                           t: float, rng: Optional[np.random.Generator] = None, fading: bool = True,
                           phase: str = "odd", guard_scale: float = 1.0) -> EnergyBreakdown:
    """Empirical energy density per stage, scaled by the measured upstream success

    Each interior cell with n members costs
    t_tx(k) [n (P_LO + P_O + P_RX) + n^2 P_LO + n P_TX + sum P_T / eta];
    t = 0 skips link simulation and counts every link as successful.
    """
    if t < 0:
        raise DomainError(f"SIR threshold must be nonnegative, got {t}")
    if t == 0:
        factors = [1.0] * plan.k_total
    else:
        evaluated, sir = simulate_links(dep, cfg, plan, mode, rng, fading, phase, guard_scale)
        factors = _upstream_success(sir, evaluated, _paths(dep), t, plan.k_total)

    per_stage = []
    for k in plan.stages:
        i = k - 1
        inside = interior_receivers(dep, k, guard_scale)
        area = interior_area(dep, k, guard_scale)
        if area <= 0:
            raise DomainError(f"Stage {k} has no interior region to measure energy in")
        n = dep.loads(k)[inside].astype(float)
        pa = np.bincount(dep.assoc[i], weights=transmit_power(cfg, dep.distance[i]) / cfg.eta,
                         minlength=len(dep.rx_points[i]))[inside]
        cells = n * (cfg.p_lo + cfg.p_o + cfg.p_rx) + n ** 2 * cfg.p_lo + n * cfg.p_tx + pa
        per_stage.append(factors[i] * plan.t_tx[i] * float(cells.sum()) / area)

    return EnergyBreakdown(per_stage=per_stage, total=math.fsum(per_stage), coverage_scaled=t > 0)


def laplace_functional_samples(dep: Deployment, cfg: NetworkConfig, stage: int, s: float,
                               rng: Optional[np.random.Generator] = None, fading: bool = True,
                               guard_scale: float = 1.0) -> np.ndarray:
    """exp(-s I) at every interior stage-k receiver, I the same-stage interference in one slot"""
    if s < 0:
        raise DomainError(f"Laplace argument must be nonnegative, got {s}")
    rng = rng if rng is not None else measurement_rng(dep)
    i = stage - 1
    schedule = _Schedule(dep.assoc[i], len(dep.rx_points[i]), rng)
    cells, members = schedule.active(0)
    positions = dep.points[dep.tx_index[i]][members]
    tx_power = transmit_power(cfg, dep.distance[i])[members]

    receivers = np.flatnonzero(interior_receivers(dep, stage, guard_scale))
    samples = np.empty(receivers.size)
    for start in range(0, receivers.size, CHUNK_SIZE):
        chunk = receivers[start:start + CHUNK_SIZE]
        dist = np.linalg.norm(dep.rx_points[i][chunk][:, None, :] - positions[None, :, :], axis=2)
        gain = np.zeros_like(dist)
        np.power(dist, -cfg.alpha, out=gain, where=dist > 0)
        gain *= tx_power[None, :]
        gain[cells[None, :] == chunk[:, None]] = 0.0
        if fading:
            gain *= rng.exponential(size=gain.shape)
        samples[start:start + chunk.size] = np.exp(-s * gain.sum(axis=1))
    return samples


def measure_laplace_functional(dep: Deployment, cfg: NetworkConfig, stage: int, s: float,
                               rng: Optional[np.random.Generator] = None, fading: bool = True) -> McEstimate:
    return McEstimate.from_samples(laplace_functional_samples(dep, cfg, stage, s, rng, fading))


def correlation_pairs(dep: Deployment, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """(N_a(k), N_a(k+1)) for each stage-k aggregator and the stage-(k+1) aggregator it reports to"""
    if not 1 <= k < dep.k_total:
        raise DomainError(f"Stage {k} has no next stage in a {dep.k_total}-stage deployment")
    upper = dep.assoc[k]
    keep = interior_receivers(dep, k + 1)[upper] & interior_receivers(dep, k)
    return dep.loads(k)[keep], dep.loads(k + 1)[upper][keep]


def correlation_region(cfg: NetworkConfig, max_points: int = MAX_CORRELATION_POINTS) -> float:
    return min(REGION_HALF_WIDTH, 0.5 * math.sqrt(max_points / cfg.lam))


def measure_stage_correlation(cfg: NetworkConfig, gamma_grid: Sequence[float], k_total: int,
                              n_deployments: int, seed: int = Config.SEED,
                              max_points: int = MAX_CORRELATION_POINTS) -> List[CorrelationRow]:
    """Pearson correlation of consecutive stage loads over a gamma grid

    The BS tier is replaced by one more aggregator tier (lambda_bs = lambda
    gamma^K) so that every stage follows the same thinning rule.
    """
    if k_total < 2:
        raise DomainError("load correlation needs at least two stages")
    region = correlation_region(cfg, max_points)
    rows = []
    for gamma in gamma_grid:
        stage_cfg = cfg.updated(lambda_bs=cfg.lam * gamma ** k_total)
        plan = build_stage_plan(stage_cfg, gamma, k_total)
        pairs = {k: ([], []) for k in range(1, k_total)}
        for dep_seed in deployment_seeds(seed, n_deployments):
            try:
                dep = sample_deployment(stage_cfg, plan, region, dep_seed)
            except DomainError as e:
                logger.warning(f"Skipping deployment at gamma={gamma:g}: {e}")
                continue
            for k in pairs:
                lower, upper = correlation_pairs(dep, k)
                pairs[k][0].append(lower)
                pairs[k][1].append(upper)

        for k, (lower, upper) in pairs.items():
            x = np.concatenate(lower) if lower else np.empty(0)
            y = np.concatenate(upper) if upper else np.empty(0)
            rho = float("nan")
            if x.size >= MIN_PAIRS and x.std() > 0 and y.std() > 0:
                rho = float(np.corrcoef(x, y)[0, 1])
            rows.append(CorrelationRow(gamma=gamma, k=k, rho=rho, n_pairs=int(x.size)))
        logger.info(f"gamma={gamma:g}: correlations {[round(r.rho, 3) for r in rows[-(k_total - 1):]]}")
    return rows


def deployment_seeds(seed: int, n_deployments: int) -> List[int]:
    """Independent per-deployment seeds spawned from one root seed"""
    if n_deployments < 1:
        raise DomainError(f"need at least one deployment, got {n_deployments}")
    children = np.random.SeedSequence(seed).spawn(n_deployments)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def _run_deployment(experiment: Callable[[Deployment], object], cfg: NetworkConfig, plan: StagePlan,
                    region: float, dep_seed: int):
    return experiment(sample_deployment(cfg, plan, region, dep_seed))


def replicate(experiment: Callable[[Deployment], object], cfg: NetworkConfig, plan: StagePlan,
              n_deployments: int, seed: int = Config.SEED, region: float = REGION_HALF_WIDTH,
              workers: int = Config.WORKERS) -> list:
    """Run an experiment on independent deployments, results in seed order

    With workers > 1 deployments run in a process pool; the experiment must
    then be picklable (a module-level function or a functools.partial of one).
    """
    seeds = deployment_seeds(seed, n_deployments)
    task = partial(_run_deployment, experiment, cfg, plan, region)
    logger.info(f"Running {n_deployments} deployments (K={plan.k_total}, gamma={plan.gamma:g}, "
                f"R={region:g} km, workers={workers})")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(task, seeds))
    return [task(dep_seed) for dep_seed in seeds]
