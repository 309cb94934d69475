import numpy as np
import pytest

from m2m.coverage import stage_sir_coverage
from m2m.errors import DomainError, TruncationError
from m2m.model import build_stage_plan, half_duplex_plan
from m2m.rate import (SirTable, auto_l_max, conditional_mean_na, expected_conditional_delay, load_pgf, load_pmf,
                      mean_inverse_load, rate_coverage, rate_coverage_curve, rate_coverage_per_stage,
                      time_sharing_factor)
from m2m.schemas import TransmissionMode

SEQ = TransmissionMode.SEQUENTIAL
FD = TransmissionMode.FULL_DUPLEX
HD = TransmissionMode.HALF_DUPLEX


def test_load_pmf_moments():
    pmf = load_pmf(900.0, 100.0, l_max=200)
    probs = np.asarray(pmf.probs)
    l = np.arange(pmf.l_max + 1)
    assert pmf.p_empty == pytest.approx(0.01162, rel=1e-3)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.sum(l * probs) == pytest.approx(9.0, abs=1e-3)
    assert np.sum(l ** 2 * probs) == pytest.approx(113.142857, abs=1e-2)


def test_load_pmf_without_transmitters():
    pmf = load_pmf(0.0, 100.0, l_max=5)
    assert pmf.probs == [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]


def test_load_pmf_truncation_guard():
    with pytest.raises(TruncationError) as info:
        load_pmf(900.0, 100.0, l_max=20)
    assert "use l_max >=" in info.value.message
    with pytest.raises(DomainError):
        load_pmf(900.0, 0.0)


def test_auto_l_max():
    assert auto_l_max(0.0, 1.0) == 20
    bound = auto_l_max(900.0, 100.0)
    assert bound > 20
    assert load_pmf(900.0, 100.0, bound).truncation_mass < 1e-6


def test_load_pgf():
    assert load_pgf(1.0, 9.0) == pytest.approx(1.0)
    assert load_pgf(0.0, 9.0) == pytest.approx(load_pmf(900.0, 100.0, 200).p_empty)
    values = load_pgf(np.array([0.0, 0.5, 1.0]), 9.0)
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("mean", [0.5, 9.0, 100.0])
def test_load_pgf_slope_at_one_is_the_mean(mean):
    h = 1e-7
    assert (1.0 - load_pgf(1.0 - h, mean)) / h == pytest.approx(mean, rel=1e-4)


def test_load_pgf_derivative_at_zero_is_single_load_probability():
    h = 1e-5
    slope = (load_pgf(h, 9.0) - load_pgf(-h, 9.0)) / (2.0 * h)
    assert slope == pytest.approx(load_pmf(900.0, 100.0, 200).probs[1], rel=1e-6)


def test_mean_inverse_load():
    pmf = load_pmf(900.0, 100.0, l_max=200)
    assert mean_inverse_load(pmf) >= 1.0 / 9.0
    with pytest.raises(DomainError):
        mean_inverse_load(load_pmf(0.0, 1.0, l_max=3))


def test_conditional_mean_na(three_stage_plan):
    values = conditional_mean_na(three_stage_plan)
    assert all(c >= mu for c, mu in zip(values, three_stage_plan.mean_na))


def test_time_sharing_factor(three_stage_plan):
    assert time_sharing_factor(three_stage_plan, SEQ) == 3.0
    assert time_sharing_factor(three_stage_plan, FD) == 1.0
    assert time_sharing_factor(three_stage_plan, HD) == 2.0


def test_rate_coverage_tends_to_one_at_low_rates(small_cfg):
    plan = build_stage_plan(small_cfg, 0.2, 1)
    assert rate_coverage(small_cfg, plan, SEQ, 1e-3) == pytest.approx(1.0, abs=1e-4)


def test_rate_coverage_curve_is_nonincreasing(small_cfg):
    # half-duplex needs gamma^2 lambda above the BS density
    plan = build_stage_plan(small_cfg, 0.4, 2)
    grid = [100.0, 1e3, 1e4, 1e5]
    for mode in (SEQ, FD, HD):
        curve = rate_coverage_curve(small_cfg, plan, mode, grid)
        assert all(0.0 <= v <= 1.0 for v in curve)
        assert all(a >= b - 1e-12 for a, b in zip(curve, curve[1:]))
        assert curve[1] == pytest.approx(rate_coverage(small_cfg, plan, mode, 1e3), rel=1e-9)


@pytest.mark.parametrize("rho", [10.0, 100.0, 300.0])
def test_sequential_beats_full_duplex_rate_coverage(table_cfg, rho):
    plan = build_stage_plan(table_cfg, 0.1, 2)
    assert rate_coverage(table_cfg, plan, SEQ, rho) >= rate_coverage(table_cfg, plan, FD, rho)


def test_half_duplex_stage_outside_phase_counts_as_covered(small_cfg):
    plan = build_stage_plan(small_cfg, 0.4, 2)
    coverage = rate_coverage_per_stage(small_cfg, plan, HD, 1e3, phase="odd")
    assert coverage.per_stage[1] == 1.0
    assert coverage.per_stage[0] < 1.0


def test_explicit_l_max_is_guarded(table_cfg):
    plan = build_stage_plan(table_cfg, 0.2, 1)
    with pytest.raises(TruncationError):
        rate_coverage(table_cfg, plan, SEQ, 1e3, l_max=5)


def test_rate_threshold_must_be_positive(small_cfg):
    plan = build_stage_plan(small_cfg, 0.2, 1)
    with pytest.raises(ValueError):
        rate_coverage(small_cfg, plan, SEQ, 0.0)


def test_single_stage_has_no_delay(small_cfg):
    plan = build_stage_plan(small_cfg, 0.2, 1)
    estimate = expected_conditional_delay(small_cfg, plan, SEQ, 100.0)
    assert estimate.expected_delay == 0.0
    assert estimate.expected_duration > 0.0
    assert 0.0 < estimate.conditioning_probability <= 1.0


@pytest.mark.slow
def test_normalized_delay(small_cfg):
    plan = build_stage_plan(small_cfg, 0.2, 2)
    raw = expected_conditional_delay(small_cfg, plan, FD, 100.0)
    normalized = expected_conditional_delay(small_cfg, plan, FD, 100.0, normalized=True)
    assert normalized.normalized and not raw.normalized
    assert raw.expected_duration > 0.0
    assert normalized.expected_duration == pytest.approx(
        raw.expected_duration / raw.conditioning_probability, rel=1e-9)


def test_half_duplex_rate_coverage_runs_on_squared_fraction_plan(small_cfg):
    plan = build_stage_plan(small_cfg, 0.4, 2)
    hd_plan = half_duplex_plan(small_cfg, plan)
    assert rate_coverage(small_cfg, plan, HD, 1e3) == pytest.approx(
        rate_coverage(small_cfg, hd_plan, HD, 1e3), rel=1e-12)
    assert rate_coverage(small_cfg, plan, HD, 1e3) != pytest.approx(
        rate_coverage(small_cfg, plan, SEQ, 1e3), rel=1e-6)


def test_sequential_two_stage_duration_exceeds_direct_under_light_load(small_cfg):
    one = expected_conditional_delay(small_cfg, build_stage_plan(small_cfg, 0.2, 1), SEQ, 100.0)
    two = expected_conditional_delay(small_cfg, build_stage_plan(small_cfg, 0.2, 2), SEQ, 100.0)
    assert two.expected_duration >= one.expected_duration
    assert two.expected_delay == pytest.approx(two.expected_duration - one.expected_duration, rel=1e-9)
    # durations are capped at M K / rho
    assert two.expected_duration <= small_cfg.m_payload * 2 / 100.0


@pytest.mark.slow
def test_finite_power_delay(capped_cfg):
    rho = 100.0
    plan = build_stage_plan(capped_cfg, 0.2, 2)
    estimate = expected_conditional_delay(capped_cfg, plan, SEQ, rho)
    direct = estimate.expected_duration - estimate.expected_delay
    assert 0.0 < estimate.expected_duration <= capped_cfg.m_payload * 2 / rho * (1.0 + 1e-6)
    assert 0.0 < direct <= capped_cfg.m_payload / rho * (1.0 + 1e-6)
    assert 0.0 < estimate.conditioning_probability <= 1.0


@pytest.mark.slow
def test_sir_table_matches_exact_coverage(capped_cfg):
    plan = build_stage_plan(capped_cfg, 0.2, 1)
    table = SirTable(capped_cfg, plan, SEQ, 1, [1.0], 1e-2)
    thresholds = np.array([0.03, 0.3, 3.0])
    exact = [stage_sir_coverage(capped_cfg, plan, SEQ, 1, t, [1.0]) for t in thresholds]
    assert list(table(thresholds)) == pytest.approx(exact, abs=5e-3)
    assert table(np.array([1e6]))[0] == 0.0
    assert table(np.array([1e-6]))[0] == pytest.approx(table.values[0])
