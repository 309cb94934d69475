import math

import numpy as np
import pytest

from m2m.coverage import coverage_rule, laplace_interference, sir_coverage_single
from m2m.energy import mean_uplink_power, mode_energy_density, second_moment_na, upper_bound_energy
from m2m.errors import DomainError, InsufficientSamplesError
from m2m.mc import (correlation_pairs, deployment_seeds, laplace_functional_samples, load_samples,
                    measure_energy_density, measure_laplace_functional, measure_load_moments, measure_pa_power,
                    measure_sir_rate_coverage, measure_stage_correlation, merge_coverage, pa_power_samples,
                    replicate, sample_deployment, transmit_power)
from m2m.model import build_stage_plan, half_duplex_plan
from m2m.rate import expected_conditional_delay, load_pmf
from m2m.schemas import McEstimate, TransmissionMode

SEQ = TransmissionMode.SEQUENTIAL
FD = TransmissionMode.FULL_DUPLEX
HD = TransmissionMode.HALF_DUPLEX

SEED = 20170101


def pooled(estimates):
    total = estimates[0]
    for estimate in estimates[1:]:
        total = total.combine(estimate)
    return total


def test_transmit_power_is_truncated(capped_cfg):
    powers = transmit_power(capped_cfg, np.array([0.5, 1.0, 2.0]))
    assert powers == pytest.approx([0.0625, 1.0, 10.0])


def test_deployment_is_deterministic(table_cfg):
    plan = build_stage_plan(table_cfg, 0.4, 3)
    first = sample_deployment(table_cfg, plan, seed=7)
    again = sample_deployment(table_cfg, plan, seed=7)
    other = sample_deployment(table_cfg, plan, seed=8)
    assert first.fingerprint() == again.fingerprint()
    assert first.fingerprint() != other.fingerprint()


def test_deployment_point_count_and_tiers(table_cfg):
    plan = build_stage_plan(table_cfg, 0.4, 3)
    dep = sample_deployment(table_cfg, plan, seed=SEED)
    expected = table_cfg.lam * dep.area
    assert abs(len(dep.points) - expected) < 5.0 * math.sqrt(expected)
    fractions = np.bincount(dep.tier_of, minlength=3) / len(dep.points)
    assert fractions == pytest.approx([0.44, 0.4, 0.16], abs=0.015)


def test_association_is_nearest_receiver(table_cfg):
    plan = build_stage_plan(table_cfg, 0.2, 2)
    dep = sample_deployment(table_cfg, plan, seed=SEED)
    rng = np.random.default_rng(3)
    for i in range(dep.k_total):
        senders = dep.points[dep.tx_index[i]]
        for j in rng.choice(len(senders), size=20, replace=False):
            dist = np.linalg.norm(dep.rx_points[i] - senders[j], axis=1)
            assert dep.assoc[i][j] == int(np.argmin(dist))
            assert dep.distance[i][j] == pytest.approx(dist.min())
    # stage-2 transmitters are exactly the stage-1 receivers
    assert np.array_equal(dep.points[dep.tx_index[1]], dep.rx_points[0])


def test_empty_receiver_tier_is_a_domain_error(table_cfg):
    plan = build_stage_plan(table_cfg, 0.4, 1)
    with pytest.raises(DomainError):
        sample_deployment(table_cfg.updated(lambda_bs=1e-4), plan, region=0.1, seed=SEED)


def test_pa_power_matches_analytic_mean(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.25, 2)
    stage = plan.stage(1)
    estimate = pooled([measure_pa_power(sample_deployment(mc_cfg, plan, seed=s), mc_cfg)
                       for s in deployment_seeds(SEED, 4)])
    analytic = mean_uplink_power(mc_cfg, stage.lambda_u, stage.lambda_a)
    assert abs(estimate.mean - analytic) <= 2.0 * estimate.half_width_95 + 0.01 * analytic


def test_pa_power_respects_cap(mc_cfg):
    cfg = mc_cfg.updated(p_t_max=2.0)
    plan = build_stage_plan(cfg, 0.25, 1)
    dep = sample_deployment(cfg, plan, seed=SEED)
    samples = pa_power_samples(dep, cfg)
    assert np.all(samples <= load_samples(dep) * cfg.p_t_max / cfg.eta + 1e-12)


def test_zero_target_power_draws_nothing(mc_cfg):
    cfg = mc_cfg.updated(p_bar_t=0.0)
    plan = build_stage_plan(cfg, 0.25, 1)
    assert measure_pa_power(sample_deployment(cfg, plan, seed=SEED), cfg).mean == 0.0


def test_load_moments_match_gamma_area_model(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    first, second, histograms = None, None, []
    for s in deployment_seeds(SEED, 4):
        mean, square, histogram = measure_load_moments(sample_deployment(mc_cfg, plan, seed=s))
        first = mean if first is None else first.combine(mean)
        second = square if second is None else second.combine(square)
        histograms.append(histogram[0])
    assert first.mean == pytest.approx(10.0, rel=0.02)
    assert second.mean == pytest.approx(second_moment_na(400.0, 40.0), rel=0.05)
    p_empty = load_pmf(400.0, 40.0, l_max=200).p_empty
    assert np.mean(histograms) == pytest.approx(p_empty, abs=0.005)


@pytest.mark.slow
def test_single_stage_sir_coverage(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    results = replicate(lambda dep: measure_sir_rate_coverage(dep, mc_cfg, plan, SEQ, [1.0], guard_scale=2.0),
                        mc_cfg, plan, n_deployments=3, seed=SEED, workers=1)
    merged = merge_coverage(results)
    assert merged.n_samples > 1000
    assert merged.joint[0] == pytest.approx(sir_coverage_single(mc_cfg, 40.0, 1.0), abs=0.04)
    assert merged.per_stage[0][0] == pytest.approx(merged.joint[0], abs=1e-9)


@pytest.mark.slow
def test_full_duplex_interference_lowers_coverage(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.25, 2)
    dep = sample_deployment(mc_cfg, plan, seed=SEED)
    seq = measure_sir_rate_coverage(dep, mc_cfg, plan, SEQ, [1.0])
    fd = measure_sir_rate_coverage(dep, mc_cfg, plan, FD, [1.0])
    assert seq.joint[0] > fd.joint[0]
    rate = measure_sir_rate_coverage(dep, mc_cfg, plan, SEQ, [100.0, 1e4], kind="rate")
    assert rate.joint[0] >= rate.joint[1]
    assert rate.mean_duration > 0.0


def test_energy_without_outage_matches_upper_bound(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    totals = [measure_energy_density(sample_deployment(mc_cfg, plan, seed=s), mc_cfg, plan, SEQ, 0.0).total
              for s in deployment_seeds(SEED, 8)]
    assert np.mean(totals) == pytest.approx(upper_bound_energy(mc_cfg, plan), rel=0.05)


def test_energy_domain(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    dep = sample_deployment(mc_cfg, plan, seed=SEED)
    with pytest.raises(DomainError):
        measure_energy_density(dep, mc_cfg, plan, SEQ, -1.0)


@pytest.mark.slow
def test_laplace_functional(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    samples = np.concatenate([laplace_functional_samples(sample_deployment(mc_cfg, plan, seed=s), mc_cfg, 1, 1.0,
                                                         guard_scale=2.0)
                              for s in deployment_seeds(SEED, 3)])
    estimate = McEstimate.from_samples(samples)
    assert np.all((samples >= 0.0) & (samples <= 1.0))
    assert estimate.mean == pytest.approx(laplace_interference(mc_cfg, 40.0, 1.0).value, abs=0.05)


def test_laplace_functional_at_zero_is_one(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    dep = sample_deployment(mc_cfg, plan, seed=SEED)
    assert measure_laplace_functional(dep, mc_cfg, 1, 0.0).mean == 1.0


def test_correlation_pairs(table_cfg):
    plan = build_stage_plan(table_cfg, 0.2, 3)
    dep = sample_deployment(table_cfg, plan, seed=SEED)
    lower, upper = correlation_pairs(dep, 1)
    assert lower.shape == upper.shape
    assert lower.size > 0
    with pytest.raises(DomainError):
        correlation_pairs(dep, 3)


@pytest.mark.slow
def test_consecutive_stage_loads_are_weakly_correlated(table_cfg):
    rows = measure_stage_correlation(table_cfg, [0.2, 0.3], 3, n_deployments=2, seed=SEED)
    assert len(rows) == 4
    for row in rows:
        assert row.n_pairs >= 30
        assert abs(row.rho) < 0.4


def test_deployment_seeds():
    assert deployment_seeds(SEED, 5) == deployment_seeds(SEED, 5)
    assert len(set(deployment_seeds(SEED, 5))) == 5
    assert deployment_seeds(SEED, 2) == deployment_seeds(SEED, 5)[:2]
    with pytest.raises(DomainError):
        deployment_seeds(SEED, 0)


def test_replicate_runs_in_seed_order(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    seeds = replicate(lambda dep: dep.seed, mc_cfg, plan, n_deployments=3, seed=SEED, region=1.0, workers=1)
    assert seeds == deployment_seeds(SEED, 3)


def test_mc_estimate():
    with pytest.raises(InsufficientSamplesError):
        McEstimate.from_samples(np.ones(99))
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(loc=1.0, size=500)
    pooled_estimate = McEstimate.from_samples(a).combine(McEstimate.from_samples(b))
    direct = McEstimate.from_samples(np.concatenate([a, b]))
    assert pooled_estimate.mean == pytest.approx(direct.mean)
    assert pooled_estimate.variance == pytest.approx(direct.variance)
    assert pooled_estimate.n_samples == 800
    assert direct.contains(direct.mean)


@pytest.mark.slow
def test_two_stage_energy_by_mode(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.4, 2)
    hd_plan = half_duplex_plan(mc_cfg, plan)
    seeds = deployment_seeds(SEED, 2)
    deployments = [sample_deployment(mc_cfg, plan, seed=s) for s in seeds]
    hd_deployments = [sample_deployment(mc_cfg, hd_plan, seed=s) for s in seeds]
    seq = np.mean([measure_energy_density(dep, mc_cfg, plan, SEQ, 1.0).total for dep in deployments])
    fd = np.mean([measure_energy_density(dep, mc_cfg, plan, FD, 1.0).total for dep in deployments])
    hd = np.mean([measure_energy_density(dep, mc_cfg, hd_plan, HD, 1.0).total for dep in hd_deployments])
    assert fd <= seq
    assert 1.4 <= hd / fd <= 2.6
    analytic = mode_energy_density(mc_cfg, plan, HD, coverage_rule(mc_cfg, HD, 1.0)(plan)).total
    assert hd == pytest.approx(analytic, rel=0.25)


@pytest.mark.slow
def test_full_duplex_duration_is_near_analytic(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.25, 2)
    results = replicate(lambda dep: measure_sir_rate_coverage(dep, mc_cfg, plan, FD, [100.0], kind="rate"),
                        mc_cfg, plan, n_deployments=2, seed=SEED, workers=1)
    simulated = merge_coverage(results).mean_duration
    analytic = expected_conditional_delay(mc_cfg, plan, FD, 100.0).expected_duration
    # simulated links see size-biased cell loads, the analytic model the typical cell
    assert 0.5 <= simulated / analytic <= 3.0


@pytest.mark.slow
def test_doubling_the_guard_leaves_coverage_within_its_interval(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    deployments = [sample_deployment(mc_cfg, plan, seed=s) for s in deployment_seeds(SEED, 3)]
    inner = merge_coverage([measure_sir_rate_coverage(dep, mc_cfg, plan, SEQ, [1.0], guard_scale=2.0)
                            for dep in deployments])
    deeper = merge_coverage([measure_sir_rate_coverage(dep, mc_cfg, plan, SEQ, [1.0], guard_scale=4.0)
                             for dep in deployments])
    p = deeper.joint[0]
    half_width = 1.96 * math.sqrt(p * (1.0 - p) / deeper.n_samples)
    assert deeper.n_samples < inner.n_samples
    assert abs(inner.joint[0] - p) < half_width


def test_quadrupling_deployments_halves_the_interval(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.1, 1)
    estimates = [measure_pa_power(sample_deployment(mc_cfg, plan, seed=s), mc_cfg)
                 for s in deployment_seeds(SEED, 8)]
    few, many = pooled(estimates[:2]), pooled(estimates)
    assert many.n_samples == pytest.approx(4 * few.n_samples, rel=0.1)
    assert many.half_width_95 / few.half_width_95 == pytest.approx(0.5, rel=0.2)
