import math

import pytest
from scipy import integrate

from m2m.coverage import coverage_rule
from m2m.energy import (LOAD_SPREAD, direct_transmission_energy, feasible_bracket, golden_section,
                        mean_na, mean_na_within, mean_received_power, mean_uplink_power, mode_energy_density,
                        optimize_gamma, second_moment_na, stage_cost, total_energy_density, upper_bound_energy)
from m2m.errors import DegeneratePlanError, DomainError
from m2m.model import build_stage_plan, half_duplex_plan
from m2m.schemas import CoverageVector, TransmissionMode


def uplink_power_oracle(cfg, lambda_u, lambda_a):
    """2 pi lambda_u / eta * integral of min(P_Tmax, P_bar r^alpha) r exp(-pi lambda_a r^2)"""
    def integrand(r):
        power = min(cfg.p_t_max, cfg.p_bar_t * r ** cfg.alpha)
        return power * r * math.exp(-math.pi * lambda_a * r * r)

    value, _ = integrate.quad(integrand, 0.0, math.inf, limit=200)
    return 2.0 * math.pi * lambda_u / cfg.eta * value


def received_power_oracle(cfg, lambda_u, lambda_a):
    def integrand(r):
        power = min(cfg.p_t_max * r ** -cfg.alpha, cfg.p_bar_t) if r > 0 else cfg.p_bar_t
        return power * r * math.exp(-math.pi * lambda_a * r * r)

    value, _ = integrate.quad(integrand, 0.0, math.inf, limit=200)
    return 2.0 * math.pi * lambda_u * value


def test_uplink_power_unlimited_closed_form(table_cfg):
    expected = 2.0 * 900.0 * math.pi / (table_cfg.eta * (100.0 * math.pi) ** 3)
    assert mean_uplink_power(table_cfg, 900.0, 100.0) == pytest.approx(expected, rel=1e-12)
    assert mean_uplink_power(table_cfg.updated(eta=1.0), 900.0, 100.0) == pytest.approx(
        1800.0 * math.pi / (100.0 * math.pi) ** 3, rel=1e-12)


@pytest.mark.parametrize("p_t_max, lambda_u, lambda_a", [(16.0, 9.0, 0.1), (1.0, 90.0, 10.0),
                                                         (5.0, 30.0, 0.5)])
def test_uplink_power_truncated_matches_quadrature(table_cfg, p_t_max, lambda_u, lambda_a):
    cfg = table_cfg.updated(p_t_max=p_t_max)
    assert mean_uplink_power(cfg, lambda_u, lambda_a) == pytest.approx(
        uplink_power_oracle(cfg, lambda_u, lambda_a), rel=1e-7)


def test_uplink_power_edge_cases(table_cfg):
    assert mean_uplink_power(table_cfg, 0.0, 100.0) == 0.0
    silent = table_cfg.updated(p_bar_t=0.0)
    assert mean_uplink_power(silent, 900.0, 100.0) == 0.0
    with pytest.raises(DomainError):
        mean_uplink_power(table_cfg, 900.0, 0.0)


def test_received_power(table_cfg):
    assert mean_received_power(table_cfg, 900.0, 100.0) == pytest.approx(9.0)
    cfg = table_cfg.updated(p_t_max=16.0)
    for lambda_u, lambda_a in [(9.0, 0.1), (30.0, 0.5)]:
        assert mean_received_power(cfg, lambda_u, lambda_a) == pytest.approx(
            received_power_oracle(cfg, lambda_u, lambda_a), rel=1e-7)
        # capping can only lose received power
        assert mean_received_power(cfg, lambda_u, lambda_a) < lambda_u / lambda_a * cfg.p_bar_t


def test_load_moments():
    assert mean_na(900.0, 100.0) == pytest.approx(9.0)
    assert second_moment_na(900.0, 100.0) == pytest.approx(9.0 + 81.0 * 4.5 / 3.5)
    assert second_moment_na(900.0, 100.0) == pytest.approx(113.142857, rel=1e-6)
    assert second_moment_na(100.0, 100.0) == pytest.approx(2.2857, rel=1e-4)
    assert LOAD_SPREAD == pytest.approx(9.0 / 7.0)


def test_mean_na_within():
    d = math.sqrt(math.log(2.0) / (math.pi * 100.0))
    assert mean_na_within(900.0, 100.0, d) == pytest.approx(4.5)
    assert mean_na_within(900.0, 100.0, 0.0) == 0.0
    assert mean_na_within(900.0, 100.0, math.inf) == pytest.approx(9.0)
    with pytest.raises(DomainError):
        mean_na_within(900.0, 100.0, -1.0)


@pytest.mark.parametrize("gamma, k_total", [(0.1, 3), (0.25, 4), (0.05, 2), (0.3, 1)])
def test_stage_cost_matches_generic_form(table_cfg, gamma, k_total):
    cfg = table_cfg
    plan = build_stage_plan(cfg, gamma, k_total)
    for k in plan.stages:
        s = plan.stage(k)
        generic = s.lambda_a * s.t_tx * (
            s.mean_na * (cfg.p_lo + cfg.p_o + cfg.p_rx)
            + second_moment_na(s.lambda_u, s.lambda_a) * cfg.p_lo
            + s.mean_na * cfg.p_tx
            + mean_uplink_power(cfg, s.lambda_u, s.lambda_a))
        assert stage_cost(cfg, plan, k) == pytest.approx(generic, rel=1e-10)


def test_single_stage_total_is_direct_transmission(table_cfg):
    plan = build_stage_plan(table_cfg, 0.2, 1)
    assert total_energy_density(table_cfg, plan).total == pytest.approx(direct_transmission_energy(table_cfg))


def test_coverage_scaling(table_cfg, three_stage_plan):
    plan = three_stage_plan
    scaled = total_energy_density(table_cfg, plan, CoverageVector(p_cov=[1.0, 0.0, 0.0]))
    assert scaled.coverage_scaled
    assert scaled.total == pytest.approx(stage_cost(table_cfg, plan, 1))

    half = total_energy_density(table_cfg, plan, CoverageVector(p_cov=[1.0, 0.5, 0.25]))
    expected = (stage_cost(table_cfg, plan, 1) + 0.5 * stage_cost(table_cfg, plan, 2)
                + 0.25 * stage_cost(table_cfg, plan, 3))
    assert half.total == pytest.approx(expected)
    assert half.total <= upper_bound_energy(table_cfg, plan)

    with pytest.raises(DomainError):
        total_energy_density(table_cfg, plan, CoverageVector(p_cov=[1.0, 0.5]))


def test_golden_section_finds_parabola_minimum():
    result = golden_section(lambda x: (x - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
    assert result["argmin"] == pytest.approx(0.3, abs=1e-6)
    assert result["converged"]


def test_feasible_bracket(table_cfg):
    assert feasible_bracket(table_cfg, 1) == pytest.approx((1e-3, 0.499))
    lo, _ = feasible_bracket(table_cfg, 4)
    assert lo == pytest.approx(0.1)
    with pytest.raises(DegeneratePlanError):
        feasible_bracket(table_cfg, 20)


def test_single_stage_optimum_is_top_of_bracket(table_cfg):
    result = optimize_gamma(table_cfg, 1)
    assert result.gamma_opt == pytest.approx(0.499)
    assert result.energy.total == pytest.approx(direct_transmission_energy(table_cfg))


def test_two_stage_optimum_beats_direct_transmission(table_cfg):
    result = optimize_gamma(table_cfg, 2)
    assert result.converged
    assert 1e-3 <= result.gamma_opt <= 0.499
    assert result.energy.total < direct_transmission_energy(table_cfg)
    for gamma in (0.01, 0.05, 0.2, 0.4):
        plan = build_stage_plan(table_cfg, gamma, 2)
        assert result.energy.total <= upper_bound_energy(table_cfg, plan) * (1.0 + 1e-9)


def test_coverage_aware_optimum_is_below_upper_bound(table_cfg):
    rule = coverage_rule(table_cfg, TransmissionMode.SEQUENTIAL, 1.0)
    result = optimize_gamma(table_cfg, 2, rule)
    assert result.energy.coverage_scaled
    plan = build_stage_plan(table_cfg, result.gamma_opt, 2)
    assert result.energy.total < upper_bound_energy(table_cfg, plan)


def test_stage_cost_increases_along_the_chain(table_cfg):
    plan = build_stage_plan(table_cfg, 0.2, 5)
    costs = [stage_cost(table_cfg, plan, k) for k in range(1, plan.k_total)]
    assert costs == sorted(costs)
    assert len(set(costs)) == len(costs)


@pytest.mark.parametrize("lambda_u, lambda_a", [(900.0, 100.0), (100.0, 1.0), (1000.0, 1.0)])
def test_uplink_power_tends_to_unlimited_form(table_cfg, lambda_u, lambda_a):
    unlimited = mean_uplink_power(table_cfg, lambda_u, lambda_a)
    for p_t_max in (1e6, 1e9, 1e12):
        capped = mean_uplink_power(table_cfg.updated(p_t_max=p_t_max), lambda_u, lambda_a)
        assert capped == pytest.approx(unlimited, rel=1e-6)


def test_two_stage_energy_by_mode(mc_cfg):
    plan = build_stage_plan(mc_cfg, 0.4, 2)
    energy = {mode: mode_energy_density(mc_cfg, plan, mode, coverage_rule(mc_cfg, mode, 1.0)(plan)).total
              for mode in TransmissionMode}
    seq, fd, hd = (energy[TransmissionMode.SEQUENTIAL], energy[TransmissionMode.FULL_DUPLEX],
                   energy[TransmissionMode.HALF_DUPLEX])
    assert fd <= seq
    assert 1.4 <= hd / fd <= 2.6
    assert hd == pytest.approx(
        total_energy_density(mc_cfg, half_duplex_plan(mc_cfg, plan),
                             coverage_rule(mc_cfg, TransmissionMode.HALF_DUPLEX, 1.0)(plan)).total)


def test_half_duplex_feasible_bracket(mc_cfg):
    lo, hi = feasible_bracket(mc_cfg, 2, mode=TransmissionMode.HALF_DUPLEX)
    assert lo == pytest.approx(math.sqrt(0.1))
    assert hi == pytest.approx(0.499)
    assert feasible_bracket(mc_cfg, 2)[0] == pytest.approx(0.1)


def test_half_duplex_optimum_runs_on_squared_fraction(mc_cfg):
    result = optimize_gamma(mc_cfg, 2, mode=TransmissionMode.HALF_DUPLEX)
    assert result.gamma_opt >= math.sqrt(0.1)
    plan = build_stage_plan(mc_cfg, result.gamma_opt, 2)
    assert result.energy.total == pytest.approx(
        mode_energy_density(mc_cfg, plan, TransmissionMode.HALF_DUPLEX).total)
