"""Shared fixtures: the baseline parameter set and a cached small solve."""

from __future__ import annotations

import pytest

from horizonopt import (
    ContractUtility,
    HorizonDistribution,
    MarketParams,
    PowerUtility,
    ProblemSpec,
    solve_uncertain_horizon,
)

# Baseline parameters used throughout: mu=.08, r=.03, sigma=.2, gamma=3,
# x0=100, p1=.5, T1=8, T=12, alpha=.25, B=50, K=1 (mean horizon 10).
SEED = 3


@pytest.fixture(scope="session")
def market() -> MarketParams:
    return MarketParams(mu=0.08, r=0.03, sigma=0.2)


@pytest.fixture(scope="session")
def power3() -> PowerUtility:
    return PowerUtility(gamma=3.0)


@pytest.fixture(scope="session")
def contract(power3) -> ContractUtility:
    return ContractUtility(base=power3, participation=0.25, threshold=50.0, guarantee=1.0)


@pytest.fixture(scope="session")
def horizon() -> HorizonDistribution:
    return HorizonDistribution(dates=[8.0], probs=[0.5], terminal=12.0)


@pytest.fixture(scope="session")
def spec(market, contract, horizon) -> ProblemSpec:
    return ProblemSpec(market=market, contract=contract, horizon=horizon, x0=100.0)


@pytest.fixture(scope="session")
def small_solution(spec):
    """Baseline solve at a reduced path count, shared across test modules."""
    return solve_uncertain_horizon(spec, n_paths=20_000, seed=SEED, budget_tol=1e-3)
