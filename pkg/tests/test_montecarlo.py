"""
Tests for the seeded Monte Carlo estimators.
"""
import math

import pytest
from numpy.testing import assert_allclose

from dfrelay.exceptions import InsufficientTrialsError, ValidationError
from dfrelay.models import CsiModel, Geometry, McConfig, OutagePolicy, PolicyKind, PowerBudget
from dfrelay.services.analysis import expected_savings_perfect, regime_probabilities
from dfrelay.services.channel import budget_for_snr, pathloss_stats
from dfrelay.services.montecarlo import (
    diversity_slope, estimate_outage, estimate_rate, estimate_regime_probs, estimate_savings,
)
from tests.conftest import SEED, stats_from

FIXED_HALF = OutagePolicy(kind=PolicyKind.FIXED, alpha_fraction=0.5)


def test_regime_frequencies_match_closed_form(mc):
    budget = PowerBudget(Ps=1.5, Pr=0.8)
    stats = stats_from(0.7, 1.3, 2.1, budget)
    closed = regime_probabilities(stats)
    estimates = estimate_regime_probs(stats, budget, mc)
    for est, p in zip(estimates, (closed.p0, closed.p1, closed.p2)):
        assert est.agrees_with(p, k=4.0)
    assert_allclose(sum(e.mean for e in estimates), 1.0)


def test_estimates_do_not_depend_on_chunks_or_workers(unit_stats, unit_budget):
    serial = McConfig(trials=10_000, seed=SEED, chunk=1_000, workers=1)
    parallel = McConfig(trials=10_000, seed=SEED, chunk=333, workers=3)
    a = estimate_rate(unit_stats, unit_budget, CsiModel.PERFECT, serial)
    b = estimate_rate(unit_stats, unit_budget, CsiModel.PERFECT, parallel)
    assert a.mean == b.mean
    assert a.stderr == b.stderr


def test_stderr_shrinks_with_root_trials(unit_stats, unit_budget):
    small = estimate_rate(unit_stats, unit_budget, CsiModel.PERFECT, McConfig(trials=10_000, seed=1))
    large = estimate_rate(unit_stats, unit_budget, CsiModel.PERFECT, McConfig(trials=40_000, seed=1))
    assert abs(small.stderr / large.stderr - 2.0) < 0.4


def test_zero_target_never_in_outage(unit_stats, unit_budget, small_mc):
    est = estimate_outage(unit_stats, unit_budget, 0.0, FIXED_HALF, small_mc)
    assert est.total.mean == 0.0


def test_negative_target_is_rejected(unit_stats, unit_budget, small_mc):
    with pytest.raises(ValidationError):
        estimate_outage(unit_stats, unit_budget, -1.0, FIXED_HALF, small_mc)


def test_outage_components_add_up(unit_stats, unit_budget, small_mc):
    est = estimate_outage(unit_stats, unit_budget, 2.0, FIXED_HALF, small_mc)
    assert_allclose(est.total.mean, est.p_dt.mean + est.p_relay.mean + est.p_dest.mean)


def test_direct_policy_only_counts_direct_outage(unit_stats, unit_budget, small_mc):
    est = estimate_outage(unit_stats, unit_budget, 1.0, OutagePolicy(kind=PolicyKind.DIRECT), small_mc)
    assert est.p_relay.mean == est.p_dest.mean == 0.0
    assert est.total.agrees_with(1.0 - math.exp(-1.0), k=4.0)


def test_perfect_rate_dominates_direct(unit_stats, unit_budget, small_mc):
    perfect = estimate_rate(unit_stats, unit_budget, CsiModel.PERFECT, small_mc)
    direct = estimate_rate(unit_stats, unit_budget, CsiModel.DIRECT, small_mc)
    assert perfect.mean >= direct.mean


def test_relay_rule_outside_ellipse_falls_back_to_direct(small_mc, ellipse_table):
    geometry = Geometry(relay_pos=(-15.0, 0.0))
    budget = budget_for_snr(5.0, 20.0, 3.6)
    stats = pathloss_stats(geometry, budget)
    practical = estimate_rate(stats, budget, CsiModel.PRACTICAL, small_mc, geometry=geometry, table=ellipse_table)
    direct = estimate_rate(stats, budget, CsiModel.DIRECT, small_mc)
    assert practical.mean == direct.mean


def test_practical_rate_gain_between_nodes():
    # 20 m link, gamma 3.6, 5 dB, relay moved along the axis
    cfg = McConfig(trials=20_000, seed=SEED)
    budget = budget_for_snr(5.0, 20.0, 3.6)
    gains = []
    for i in range(1, 39):
        stats = pathloss_stats(Geometry(relay_pos=(0.5 * i, 0.0)), budget)
        practical = estimate_rate(stats, budget, CsiModel.PRACTICAL, cfg, relay_used=True)
        direct = estimate_rate(stats, budget, CsiModel.DIRECT, cfg)
        gains.append(100.0 * (practical.mean / direct.mean - 1.0))
    assert 100.0 <= max(gains) <= 140.0


def test_perfect_savings_match_closed_form(unit_stats, unit_budget, mc):
    est = estimate_savings(unit_stats, unit_budget, CsiModel.PERFECT, mc)
    assert_allclose(expected_savings_perfect(unit_stats, unit_budget), 0.15343, atol=1e-5)
    assert est.agrees_with(expected_savings_perfect(unit_stats, unit_budget), k=4.0)


def test_unclamped_practical_savings(unit_budget, mc):
    stats = stats_from(1.0, 2.0, 1.0, unit_budget)
    est = estimate_savings(stats, unit_budget, CsiModel.PRACTICAL, mc, clamp=False)
    assert est.agrees_with(0.5, k=4.0)


def test_practical_savings_zero_in_block_markov_average(unit_budget, small_mc):
    est = estimate_savings(stats_from(0.1, 2.0, 2.0, unit_budget), unit_budget, CsiModel.PRACTICAL, small_mc)
    assert est.mean == 0.0
    assert est.stderr == 0.0


def test_savings_undefined_for_long_term(unit_stats, unit_budget, small_mc):
    with pytest.raises(ValidationError):
        estimate_savings(unit_stats, unit_budget, CsiModel.LONG_TERM, small_mc)


# ============================================================================
# Diversity
# ============================================================================

HIGH_SNR_GRID = [30.0 + 2.5 * i for i in range(9)]


def test_composite_diversity_order_two(midpoint_geometry):
    stats = pathloss_stats(midpoint_geometry, budget_for_snr(0.0, 20.0, 3.6))
    slope = diversity_slope(stats, 5.0, HIGH_SNR_GRID)
    assert -2.2 <= slope <= -1.8


def test_direct_diversity_order_one(midpoint_geometry):
    stats = pathloss_stats(midpoint_geometry, budget_for_snr(0.0, 20.0, 3.6))
    slope = diversity_slope(stats, 5.0, HIGH_SNR_GRID, policy=OutagePolicy(kind=PolicyKind.DIRECT))
    assert -1.2 <= slope <= -0.8


def test_diversity_is_scale_invariant(unit_stats):
    doubled = unit_stats.model_copy(update={
        "lambda_rs": 2.0, "lambda_ds": 2.0, "lambda_dr": 2.0, "lambda_dr_tilde": 2.0,
    })
    base = diversity_slope(unit_stats, 5.0, HIGH_SNR_GRID)
    assert abs(diversity_slope(doubled, 5.0, HIGH_SNR_GRID) - base) < 0.05


def test_diversity_needs_observed_outages(unit_stats):
    cfg = McConfig(trials=100, seed=SEED)
    with pytest.raises(InsufficientTrialsError):
        diversity_slope(unit_stats, 5.0, [50.0, 55.0], source="monte_carlo", cfg=cfg)


def test_diversity_rejects_unknown_source(unit_stats):
    with pytest.raises(ValidationError):
        diversity_slope(unit_stats, 5.0, [10.0, 20.0], source="simulation")
