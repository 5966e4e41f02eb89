"""
Tests for rate constraints, regimes, the closed-form allocation and the oracle.
"""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from numpy.testing import assert_allclose

from dfrelay.exceptions import ConstraintViolationError, EmptyGridError
from dfrelay.models import LinkGains, OracleGrid, PowerAllocation, PowerBudget, Regime
from dfrelay.services.ratecore import (
    achieved_rate, classical_allocation, classify_regime, direct_rate, fixed_allocation,
    optimal_allocation, optimal_allocation_arrays, oracle_allocation, rate_constraints,
    relay_power_used, xi_arrays,
)

gain = st.floats(min_value=0.05, max_value=5.0)
power = st.floats(min_value=0.1, max_value=10.0)


def test_rate_constraints_at_crossing_point():
    Ps = 1.0
    alpha = ((-0.5 + math.sqrt(11.25)) / 4.0) ** 2
    alloc = PowerAllocation(alpha_s=alpha, beta_s=Ps - alpha, k_s=1.0 / alpha, beta_r=0.0)
    pair = rate_constraints(LinkGains(g_rs=2.0, g_ds=0.5, g_dr=1.0), alloc)
    assert_allclose(pair.j1, 1.5673, atol=1e-4)
    assert abs(pair.j1 - pair.j2) < 1e-12


def test_independent_coding_example(unit_budget):
    result = optimal_allocation(LinkGains(g_rs=2.0, g_ds=1.0, g_dr=2.0), unit_budget)
    assert result.regime == Regime.R1
    assert result.allocation.alpha_s == 0.0
    assert_allclose(result.allocation.beta_r, 0.75)
    assert_allclose(result.rate, math.log2(5.0))


def test_block_markov_example(unit_budget):
    result = optimal_allocation(LinkGains(g_rs=2.0, g_ds=0.5, g_dr=1.0), unit_budget)
    assert result.regime == Regime.R2
    assert_allclose(result.allocation.alpha_s, 0.50912, atol=1e-5)
    assert_allclose(result.allocation.k_s, 1.9642, atol=1e-4)
    assert result.allocation.beta_r == 0.0
    assert_allclose(result.rate, 1.5673, atol=1e-4)


def test_direct_regime(unit_budget):
    gains = LinkGains(g_rs=0.5, g_ds=1.0, g_dr=1.0)
    result = optimal_allocation(gains, unit_budget)
    assert result.regime == Regime.R0
    assert result.allocation.beta_r == 0.0
    assert_allclose(result.rate, direct_rate(gains, unit_budget))
    assert_allclose(result.rate, 1.0)


def test_regime_boundaries_are_closed_on_the_right(unit_budget):
    # g_rs^2 == g_ds^2 is R0; g_rs^2 == g_ds^2 + (Pr/Ps) g_dr^2 is R1 (4 == 1 + 3)
    assert classify_regime(LinkGains(g_rs=1.0, g_ds=1.0, g_dr=1.0), unit_budget) == Regime.R0
    budget = PowerBudget(Ps=1.0, Pr=3.0)
    assert classify_regime(LinkGains(g_rs=2.0, g_ds=1.0, g_dr=1.0), budget) == Regime.R1
    assert classify_regime(LinkGains(g_rs=2.0 + 1e-9, g_ds=1.0, g_dr=1.0), budget) == Regime.R2
    result = optimal_allocation(LinkGains(g_rs=2.0, g_ds=1.0, g_dr=1.0), budget)
    assert result.regime == Regime.R1
    assert_allclose(result.allocation.beta_r, 3.0)


def test_dead_relay_link_never_gives_independent_coding(unit_budget):
    assert classify_regime(LinkGains(g_rs=2.0, g_ds=1.0, g_dr=0.0), unit_budget) == Regime.R2


@given(g_rs=gain, g_ds=gain, g_dr=gain, Ps=power, Pr=power)
@settings(max_examples=200, deadline=None)
def test_crossing_identity(g_rs, g_ds, g_dr, Ps, Pr):
    budget = PowerBudget(Ps=Ps, Pr=Pr)
    result = optimal_allocation(LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr), budget)
    assume(result.regime != Regime.R0)
    assume(result.regime == Regime.R1 or result.allocation.alpha_s > 1e-9)
    pair = rate_constraints(LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr), result.allocation)
    assert abs(pair.j1 - pair.j2) <= 1e-9 * max(1.0, pair.j1)


@given(g_rs=gain, g_ds=gain, g_dr=gain, Ps=power, Pr=power)
@settings(max_examples=200, deadline=None)
def test_closed_form_is_feasible(g_rs, g_ds, g_dr, Ps, Pr):
    budget = PowerBudget(Ps=Ps, Pr=Pr)
    result = optimal_allocation(LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr), budget)
    result.allocation.check_feasible(budget)
    assert result.rate >= direct_rate(LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr), budget) - 1e-12


def test_closed_form_beats_oracle(unit_budget):
    rng = np.random.default_rng(5)
    for _ in range(30):
        g_rs, g_ds, g_dr = np.sqrt(rng.exponential(1.0, size=3))
        gains = LinkGains(g_rs=g_rs, g_ds=g_ds, g_dr=g_dr)
        closed = optimal_allocation(gains, unit_budget).rate
        assert closed >= oracle_allocation(gains, unit_budget, OracleGrid(refine=False)).rate - 1e-4
        assert closed >= oracle_allocation(gains, unit_budget).rate - 1e-6


def test_oracle_reports_direct_transmission(unit_budget):
    result = oracle_allocation(LinkGains(g_rs=0.5, g_ds=1.0, g_dr=1.0), unit_budget)
    assert result.relay_used is False
    assert_allclose(result.rate, 1.0)


def test_oracle_rejects_empty_grid(unit_budget):
    with pytest.raises(EmptyGridError):
        oracle_allocation(LinkGains(g_rs=1.0, g_ds=1.0, g_dr=1.0), unit_budget, OracleGrid(alpha_points=0))


def test_vectorised_matches_scalar(unit_budget):
    g2 = np.array([[4.0, 1.0, 4.0], [4.0, 0.25, 1.0], [0.25, 1.0, 1.0]])
    out = optimal_allocation_arrays(g2[:, 0], g2[:, 1], g2[:, 2], unit_budget)
    for i, row in enumerate(g2):
        single = optimal_allocation(LinkGains(g_rs=math.sqrt(row[0]), g_ds=math.sqrt(row[1]), g_dr=math.sqrt(row[2])), unit_budget)
        assert_allclose(out["rate"][i], single.rate)
    assert list(out["regime"]) == [1, 2, 0]


def test_xi_is_bounded_by_source_power():
    xi = xi_arrays(np.array([4.0, 100.0]), np.array([0.25, 0.1]), np.array([1.25, 1.0]), 1.0)
    assert np.all((xi > 0) & (xi <= 1.0))


def test_fixed_allocation_uses_full_relay_power(unit_budget):
    alloc = fixed_allocation(0.25, unit_budget)
    assert_allclose(relay_power_used(alloc), 1.0)
    assert fixed_allocation(0.0, unit_budget).beta_r == 1.0


def test_classical_matches_rate_without_savings(unit_budget):
    gains = LinkGains(g_rs=2.0, g_ds=1.0, g_dr=2.0)
    classical = classical_allocation(gains, unit_budget)
    composite = optimal_allocation(gains, unit_budget)
    assert_allclose(classical.rate, composite.rate)
    assert_allclose(relay_power_used(classical.allocation), unit_budget.Pr)
    assert relay_power_used(composite.allocation) < unit_budget.Pr


def test_achieved_rate_checks_budget(unit_budget):
    gains = LinkGains(g_rs=1.0, g_ds=1.0, g_dr=1.0)
    with pytest.raises(ConstraintViolationError):
        achieved_rate(gains, PowerAllocation(alpha_s=0.0, beta_s=2.0, k_s=0.0, beta_r=0.0), True, unit_budget)
    direct = achieved_rate(gains, PowerAllocation(alpha_s=0.0, beta_s=1.0, k_s=0.0, beta_r=0.0), False, unit_budget)
    assert_allclose(direct, 1.0)


def test_scalar_kernel_handles_block_markov(unit_budget):
    out = optimal_allocation_arrays(4.0, 0.25, 1.0, unit_budget)
    assert out["regime"].shape == ()
    assert int(out["regime"]) == 2
    assert_allclose(float(out["alpha_s"]), 0.50912, atol=1e-5)
    assert float(out["beta_r"]) == 0.0


def test_classical_on_block_markov_channel(unit_budget):
    gains = LinkGains(g_rs=2.0, g_ds=0.5, g_dr=1.0)
    classical = classical_allocation(gains, unit_budget)
    assert classical.regime == Regime.R2
    assert_allclose(classical.rate, optimal_allocation(gains, unit_budget).rate)


@pytest.mark.parametrize("g_ds, g_dr, Pr", [(1.0, 1.0, 1.0), (0.5, 1.0, 2.0), (0.8, 0.3, 0.5)])
def test_rate_is_continuous_across_regime_boundaries(g_ds, g_dr, Pr):
    budget = PowerBudget(Ps=1.0, Pr=Pr)
    eps = 1e-9
    for edge in (g_ds ** 2, g_ds ** 2 + Pr * g_dr ** 2):
        below = optimal_allocation(LinkGains(g_rs=math.sqrt(edge - eps), g_ds=g_ds, g_dr=g_dr), budget)
        above = optimal_allocation(LinkGains(g_rs=math.sqrt(edge + eps), g_ds=g_ds, g_dr=g_dr), budget)
        assert below.regime != above.regime
        assert abs(below.rate - above.rate) < 1e-6


def test_rate_is_monotone_in_each_gain(unit_budget):
    rng = np.random.default_rng(17)
    for _ in range(50):
        g = np.sqrt(rng.exponential(1.0, size=3))
        base = optimal_allocation(LinkGains(g_rs=g[0], g_ds=g[1], g_dr=g[2]), unit_budget).rate
        for i in range(3):
            bumped = g.copy()
            bumped[i] *= 1.05
            rate = optimal_allocation(LinkGains(g_rs=bumped[0], g_ds=bumped[1], g_dr=bumped[2]), unit_budget).rate
            assert rate >= base - 1e-9
