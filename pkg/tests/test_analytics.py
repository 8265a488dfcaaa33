"""Stopped-wealth statistics: expected utility, certainty equivalent,
variance, and the fixed-horizon comparison.

The expected-utility estimate is validated against an independent-seed
re-solve (same estimand, fresh draws); orderings are asserted only beyond
3 standard errors of paired differences.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horizonopt import (
    HorizonDistribution,
    ProblemSpec,
    certainty_equivalent,
    compare_to_fixed,
    expected_utility,
    martingale_regression,
    payoff_value,
    solve_uncertain_horizon,
    stopped_samples,
    stopped_variance,
)
from horizonopt.analytics import StoppedSampleSet

SEED = 909


def make_set(dates, wealth, **meta) -> StoppedSampleSet:
    return StoppedSampleSet(
        dates=np.asarray(dates, dtype=float), wealth=np.asarray(wealth, dtype=float), meta=meta
    )


class TestStoppedSamples:
    def test_stratified_frequencies(self, spec, small_solution):
        sset = stopped_samples(spec, small_solution)
        early = float(np.mean(sset.dates == 8.0))
        # exact stratification: off only through integer rounding
        assert abs(early - 0.5) <= 1.0 / sset.n
        se = math.sqrt(0.5 * 0.5 / sset.n)
        assert abs(early - 0.5) < 3 * se

    def test_samples_align_with_solution_paths(self, spec, small_solution):
        sset = stopped_samples(spec, small_solution)
        k = int(round(0.5 * small_solution.n_paths))
        np.testing.assert_array_equal(sset.wealth[:k], small_solution.wealth_T1[:k])
        np.testing.assert_array_equal(sset.wealth[k:], small_solution.wealth_T[k:])


class TestExpectedUtility:
    def test_all_zero_wealth_gives_guarantee_utility(self, contract):
        sset = make_set([8.0] * 64, [0.0] * 64)
        eu = expected_utility(sset, contract)
        assert eu.value == -0.5 and eu.se == 0.0

    def test_wealth_at_threshold_gives_guarantee_utility(self, contract):
        sset = make_set([12.0] * 64, [50.0] * 64)
        assert expected_utility(sset, contract).value == -0.5

    def test_rejects_negative_wealth(self, contract):
        with pytest.raises(ValueError, match="negative"):
            expected_utility(make_set([8.0, 8.0], [1.0, -2.0]), contract)

    def test_independent_seed_oracle(self, market, contract):
        # fixed-horizon solve: the multiplier is closed-form calibrated, so
        # expected utility over disjoint draws is a pure iid mean and two
        # seeds must agree within 3 combined SE
        from horizonopt import inverse_marginal, simulate_paths, solve_fixed_horizon

        sp = ProblemSpec(market, contract, HorizonDistribution([], [], 10.0), 100.0)
        nu = solve_fixed_horizon(sp).nu
        estimates = []
        for seed in (SEED, SEED + 1):
            paths = simulate_paths(market, [10.0], 100_000, seed=seed)
            _, h = paths.column(10.0)
            wealth = np.asarray(inverse_marginal(contract, nu * h))
            sset = make_set([10.0] * len(wealth), wealth)
            estimates.append(expected_utility(sset, contract))
        (a, b) = estimates
        assert abs(a.value - b.value) < 3 * math.hypot(a.se, b.se)


class TestCertaintyEquivalent:
    def test_floor_maps_to_threshold(self, contract):
        assert certainty_equivalent(-0.5, contract) == 50.0

    def test_round_trip_at_tangency(self, contract):
        eu = float(payoff_value(contract, contract.x_hat))
        assert certainty_equivalent(eu, contract) == pytest.approx(
            contract.x_hat, rel=1e-10
        )

    def test_round_trip_random_levels(self, contract):
        rng = np.random.default_rng(5)
        floor = -0.5
        eus = floor * rng.uniform(1e-6, 0.999, 1000)  # utilities in (floor, 0)
        for eu in eus:
            ce = certainty_equivalent(float(eu), contract)
            back = float(payoff_value(contract, ce))
            assert abs(back - eu) <= 1e-10 * abs(eu)

    def test_below_floor_is_infeasible(self, contract):
        with pytest.raises(ValueError, match="floor"):
            certainty_equivalent(-0.6, contract)

    @settings(max_examples=100, deadline=None)
    @given(level=st.floats(1e-6, 0.999))
    def test_round_trip_holds_everywhere(self, contract, level):
        eu = -0.5 * level
        ce = certainty_equivalent(eu, contract)
        assert float(payoff_value(contract, ce)) == pytest.approx(eu, rel=1e-10)


class TestStoppedVariance:
    def test_degenerate_samples(self, contract):
        assert stopped_variance(make_set([8.0] * 10, [70.0] * 10)).value == 0.0

    def test_fixed_probability_reduction(self, spec, small_solution):
        # the early and late strata have the documented sizes
        sset = stopped_samples(spec, small_solution)
        var_direct = float(np.var(sset.wealth, ddof=1))
        assert stopped_variance(sset).value == var_direct

    def test_vanishing_probability_reduces_to_terminal_variance(self, market, contract):
        # with round(p n) = 0 early stops the stopped sample is the terminal one
        horizon = HorizonDistribution([8.0], [1e-9], 12.0)
        sp = ProblemSpec(market, contract, horizon, 100.0)
        sol = solve_uncertain_horizon(sp, 20_000, seed=SEED + 4, budget_tol=1e-3)
        sset = stopped_samples(sp, sol)
        assert stopped_variance(sset).value == float(np.var(sol.wealth_T, ddof=1))

    def test_mean_preserving_spread_increases_variance(self, market, contract):
        results = []
        for d in (1.0, 3.0):
            horizon = HorizonDistribution([10.0 - d], [0.5], 10.0 + d)
            sp = ProblemSpec(market, contract, horizon, 100.0)
            sol = solve_uncertain_horizon(sp, 20_000, seed=SEED + 2, budget_tol=1e-3)
            results.append(stopped_samples(sp, sol).wealth)
        narrow, wide = results
        diff = float(np.var(wide, ddof=1) - np.var(narrow, ddof=1))
        influence = (wide - wide.mean()) ** 2 - (narrow - narrow.mean()) ** 2
        se = influence.std(ddof=1) / math.sqrt(len(influence))
        assert diff > 3 * se


class TestCompareToFixed:
    def test_rejects_mismatched_expectation(self, spec, small_solution):
        with pytest.raises(ValueError, match="mean"):
            compare_to_fixed(spec, small_solution, 9.5)

    def test_baseline_orderings(self, spec, small_solution):
        comparison = compare_to_fixed(spec, small_solution, 10.0)
        assert comparison.ce_diff < -3 * comparison.ce_diff_se
        assert comparison.var_diff > 3 * comparison.var_diff_se

    def test_small_stop_probability_shrinks_differences(self, market, contract):
        horizon = HorizonDistribution([8.0], [0.01], 12.0)
        sp = ProblemSpec(market, contract, horizon, 100.0)
        sol = solve_uncertain_horizon(sp, 20_000, seed=SEED + 3, budget_tol=1e-3)
        comparison = compare_to_fixed(sp, sol, horizon.expected_stop)
        assert abs(comparison.ce_diff) < 0.35  # gap is ~1.3 at p = 0.5


class TestMartingaleRegression:
    def test_zero_for_true_martingale(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=50_000)
        increments = rng.normal(size=50_000) * (1.0 + 0.5 * np.abs(x))
        result = martingale_regression(increments, x)
        assert np.all(np.abs(result.tstats) < 3.0)

    def test_detects_conditional_drift(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=50_000)
        increments = 0.05 * x + rng.normal(size=50_000)
        result = martingale_regression(increments, x)
        assert abs(result.tstats[1]) > 3.0
