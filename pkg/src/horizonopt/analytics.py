"""Monte-Carlo statistics over stopped-wealth samples.

Expected utility, certainty equivalent, stopped-portfolio variance, and
the uncertain-versus-fixed-horizon comparison. Every point estimate
carries a standard error; comparisons are paired path by path (common
random numbers) so ordering statements can be tested against their own
standard errors.

Stopping dates are stratified: with n paths and stopping probability p,
exactly round(p n) samples stop early. This removes stopping-date noise
from comparisons; the remaining randomness is in the market draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .market import SimulatedPaths, bridge_insert
from .nonconcave import ProblemSpec, SolverSolution, solve_fixed_horizon
from .payoff import ContractUtility, inverse_marginal, payoff_value

__all__ = [
    "MeanWithError",
    "StoppedSampleSet",
    "HorizonComparison",
    "stopped_samples",
    "expected_utility",
    "certainty_equivalent",
    "stopped_variance",
    "fixed_horizon_wealth",
    "compare_to_fixed",
    "martingale_regression",
]


class MeanWithError(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class StoppedSampleSet:
    """Per-path (stopping date, stopped wealth) samples with provenance."""

    dates: NDArray[np.float64]
    wealth: NDArray[np.float64]
    meta: dict

    def __post_init__(self) -> None:
        if self.dates.shape != self.wealth.shape or self.dates.ndim != 1:
            raise ValueError("dates and wealth must be equal-length vectors")
        if self.dates.size == 0:
            raise ValueError("empty sample set")

    @property
    def n(self) -> int:
        return int(self.dates.size)


def stopped_samples(spec: ProblemSpec, solution: SolverSolution) -> StoppedSampleSet:
    """Stratified stopped-wealth samples of a two-date solution.

    The first round(p n) paths stop at T_1 with their stop-date wealth,
    the rest run to the terminal date. Path order matches the solution
    arrays, so sample i of two coupled sets refers to the same draws.
    """
    p = spec.horizon.probs[0]
    t1 = spec.horizon.dates[0]
    T = spec.horizon.terminal
    n = solution.n_paths
    k = int(round(p * n))
    dates = np.where(np.arange(n) < k, t1, T)
    wealth = np.where(np.arange(n) < k, solution.wealth_T1, solution.wealth_T)
    meta = {"seed": solution.seed, "n_paths": n, "p": p, "t1": t1, "terminal": T}
    return StoppedSampleSet(dates=dates, wealth=wealth, meta=meta)


def expected_utility(sset: StoppedSampleSet, c: ContractUtility) -> MeanWithError:
    """Sample mean of the contract utility with its standard error."""
    if np.any(sset.wealth < 0.0):
        raise ValueError("negative wealth in sample set")
    values = payoff_value(c, sset.wealth)
    n = sset.n
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MeanWithError(float(np.mean(values)), se)


def certainty_equivalent(eu: float, c: ContractUtility) -> float:
    """Deterministic wealth whose contract utility equals eu.

    Inverted on the strictly increasing branch above the participation
    threshold; the flat level U(K) maps to the threshold itself (smallest
    such wealth). Values below U(K) are unattainable.
    """
    floor = float(c.base.value(c.guarantee))
    if eu < floor:
        raise ValueError(f"expected utility {eu} below the attainable floor {floor}")
    if eu == floor:
        return c.threshold
    payout = float(c.base.inverse_value(eu))
    return c.threshold + (payout - c.guarantee) / c.participation


def _variance_se(x: NDArray[np.float64]) -> float:
    n = x.size
    if n < 2:
        return 0.0
    centered = x - x.mean()
    m4 = float(np.mean(centered**4))
    s2 = float(np.var(x, ddof=1))
    inner = m4 - (n - 3) / (n - 1) * s2**2
    return math.sqrt(max(inner, 0.0) / n)


def stopped_variance(sset: StoppedSampleSet) -> MeanWithError:
    """Unbiased sample variance of the stopped wealth with standard error."""
    return MeanWithError(float(np.var(sset.wealth, ddof=1)), _variance_se(sset.wealth))


def _ce_slope(eu: float, c: ContractUtility) -> float:
    """d CE / d EU, from the inverse-function rule on the increasing branch."""
    ce = certainty_equivalent(eu, c)
    return 1.0 / float(c.marginal_above(max(ce, c.threshold * (1 + 1e-12))))


@dataclass(frozen=True)
class HorizonComparison:
    """Uncertain-horizon performance against the matched fixed horizon."""

    t_tilde: float
    eu_uncertain: MeanWithError
    eu_fixed: MeanWithError
    ce_uncertain: float
    ce_fixed: float
    ce_diff: float
    ce_diff_se: float
    var_uncertain: MeanWithError
    var_fixed: MeanWithError
    var_diff: float
    var_diff_se: float
    nu_fixed: float


def fixed_horizon_wealth(
    spec: ProblemSpec, solution: SolverSolution, horizon: float
) -> tuple[float, NDArray[np.float64]]:
    """Terminal wealth of the fixed-horizon optimum on coupled draws.

    The kernel at the fixed horizon is sampled by conditional insertion
    between the solution's stored dates (a Brownian bridge), so the fixed
    and uncertain samples share their randomness path by path.
    """
    t1 = spec.horizon.dates[0]
    T = spec.horizon.terminal
    fixed = solve_fixed_horizon(spec, horizon=horizon)
    base = SimulatedPaths(
        params=spec.market,
        dates=(t1, T),
        w=np.column_stack([solution.w_T1, solution.w_T]),
        h=np.column_stack([solution.h_T1, solution.h_T]),
    )
    refined = bridge_insert(base, horizon, seed=solution.seed)
    _, h_mid = refined.column(horizon)
    wealth = inverse_marginal(spec.contract, fixed.nu * h_mid)
    return fixed.nu, np.asarray(wealth)


def compare_to_fixed(
    spec: ProblemSpec, solution: SolverSolution, t_tilde: float
) -> HorizonComparison:
    """Certainty-equivalent and variance comparison at matched mean horizon.

    Requires t_tilde = E[tau ^ T]. Differences carry paired standard
    errors computed from per-path influence values, which is valid for
    coupled as well as independent samples.
    """
    expected = spec.horizon.expected_stop
    if not math.isclose(t_tilde, expected, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError(
            f"t_tilde={t_tilde} does not match the stopped-clock mean {expected}"
        )
    c = spec.contract
    sset = stopped_samples(spec, solution)
    nu_fixed, wealth_fixed = fixed_horizon_wealth(spec, solution, t_tilde)

    eu_u = expected_utility(sset, c)
    values_u = payoff_value(c, sset.wealth)
    values_f = payoff_value(c, wealth_fixed)
    n = sset.n
    eu_f = MeanWithError(
        float(np.mean(values_f)), float(np.std(values_f, ddof=1) / math.sqrt(n))
    )

    ce_u = certainty_equivalent(eu_u.value, c)
    ce_f = certainty_equivalent(eu_f.value, c)
    slope_u = _ce_slope(eu_u.value, c)
    slope_f = _ce_slope(eu_f.value, c)
    ce_influence = slope_u * (values_u - eu_u.value) - slope_f * (values_f - eu_f.value)
    ce_diff_se = float(np.std(ce_influence, ddof=1) / math.sqrt(n))

    var_u = stopped_variance(sset)
    var_f = MeanWithError(float(np.var(wealth_fixed, ddof=1)), _variance_se(wealth_fixed))
    infl_u = (sset.wealth - sset.wealth.mean()) ** 2
    infl_f = (wealth_fixed - wealth_fixed.mean()) ** 2
    var_influence = infl_u - infl_f
    var_diff_se = float(np.std(var_influence, ddof=1) / math.sqrt(n))

    return HorizonComparison(
        t_tilde=t_tilde,
        eu_uncertain=eu_u,
        eu_fixed=eu_f,
        ce_uncertain=ce_u,
        ce_fixed=ce_f,
        ce_diff=ce_u - ce_f,
        ce_diff_se=ce_diff_se,
        var_uncertain=var_u,
        var_fixed=var_f,
        var_diff=var_u.value - var_f.value,
        var_diff_se=var_diff_se,
        nu_fixed=nu_fixed,
    )


class RegressionResult(NamedTuple):
    coefficients: NDArray[np.float64]
    tstats: NDArray[np.float64]


def martingale_regression(residual, regressors) -> RegressionResult:
    """OLS of a martingale-increment residual on time-t information.

    Under the martingale property every coefficient (including the
    intercept, which is prepended) is zero in expectation; the returned
    t-statistics quantify deviations. This is the empirical surrogate for
    the representation property of stopped wealth.

    Covariance is heteroskedasticity-robust (White): the increments are
    strongly heteroskedastic in the conditioning state, and homoskedastic
    standard errors are visibly miscalibrated at usual sample sizes.
    """
    d = np.asarray(residual, dtype=float)
    x = np.asarray(regressors, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = d.size
    design = np.column_stack([np.ones(n), x])
    beta, _, _, _ = np.linalg.lstsq(design, d, rcond=None)
    resid = d - design @ beta
    bread = np.linalg.inv(design.T @ design)
    meat = (design * (resid**2)[:, None]).T @ design
    cov = bread @ meat @ bread
    se = np.sqrt(np.diag(cov))
    return RegressionResult(beta, beta / se)
