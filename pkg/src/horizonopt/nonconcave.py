"""Non-concave portfolio optimization with an uncertain two-date horizon.

The optimal stopped wealth is driven by per-path Lagrange multipliers: a
deterministic constant C ties the stop-date multiplier nu_T1 and the
terminal multiplier nu_T together through

    p nu_T1 + (1 - p) nu_T = C,

nu_T is pinned per path by matching the stop-date wealth against the
closed-form value of the optimal terminal claim (an implicit equation,
since the truncation level inside the g factor depends on nu_T itself),
and C is calibrated so the Monte-Carlo budget hits the initial capital.
Paths that are too expensive to support wealth above the tangency point
receive zero wealth and the +inf multiplier sentinel.

The fixed-horizon problem (no interior stopping mass) is the degenerate
case with a deterministic terminal multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.special import ndtr

from .market import (
    HorizonDistribution,
    MarketParams,
    PathState,
    SimulatedPaths,
    f_factor,
    g_factor,
    norm_pdf,
    simulate_paths,
    state_price_density,
)
from .payoff import ContractUtility, inverse_marginal

__all__ = [
    "ProblemSpec",
    "FixedHorizonSolution",
    "SolverSolution",
    "ConvergenceError",
    "InnerRootError",
    "solve_fixed_horizon",
    "solve_inner_nu_T",
    "solve_uncertain_horizon",
    "wealth_at",
    "strategy_at",
]

# Bisection sweeps for the per-path implicit multiplier equation. The root
# is refined in log space; 64 halvings reach the resolution limit of double
# precision, the coarse count is enough for intermediate budget evaluations.
_INNER_ITERS_COARSE = 42
_INNER_ITERS_FINAL = 64
_INNER_LOG_SPAN = 69.0  # lower bracket endpoint: e^-69 ~ 1e-30 of the cap

_MAX_OUTER_ITERS = 200
_OUTER_BRACKET_RTOL = 4e-13


class ConvergenceError(RuntimeError):
    """Outer calibration failed; carries the (C, budget) evaluation history."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = tuple(history)


class InnerRootError(RuntimeError):
    """The per-path residual had no sign change on the feasible interval."""


@dataclass(frozen=True)
class ProblemSpec:
    """Market, contract, horizon and initial capital of one problem."""

    market: MarketParams
    contract: ContractUtility
    horizon: HorizonDistribution
    x0: float

    def __post_init__(self) -> None:
        if not (self.x0 > 0.0):
            raise ValueError(f"initial capital must be positive, got {self.x0}")


@dataclass(frozen=True)
class FixedHorizonSolution:
    """Deterministic terminal multiplier of the fixed-horizon problem."""

    nu: float
    budget_residual: float
    horizon: float


@dataclass(frozen=True)
class SolverSolution:
    """Calibrated multipliers and wealth samples of the two-date problem.

    Array fields are per path. Multipliers are +inf exactly on zero-wealth
    paths; on all other paths p nu_T1 + (1 - p) nu_T equals c_star.
    """

    spec: ProblemSpec
    c_star: float
    nu_T1: NDArray[np.float64] = field(repr=False)
    nu_T: NDArray[np.float64] = field(repr=False)
    wealth_T1: NDArray[np.float64] = field(repr=False)
    wealth_T: NDArray[np.float64] = field(repr=False)
    w_T1: NDArray[np.float64] = field(repr=False)
    h_T1: NDArray[np.float64] = field(repr=False)
    w_T: NDArray[np.float64] = field(repr=False)
    h_T: NDArray[np.float64] = field(repr=False)
    inner_residuals: NDArray[np.float64] = field(repr=False)
    budget_estimate: float
    budget_residual: float
    iterations: int
    bracket_history: tuple
    seed: int
    n_paths: int
    budget_tol: float

    @property
    def zero_mask(self) -> NDArray[np.bool_]:
        return ~np.isfinite(self.nu_T)


def _contract_constants(spec: ProblemSpec):
    c = spec.contract
    gamma = c.gamma
    q = (gamma - 1.0) / gamma
    scale = c.participation ** (-q)
    shift = c.guarantee / c.participation - c.threshold
    return gamma, q, scale, shift, c.gap_slope


def _fixed_budget(nu: float, spec: ProblemSpec, horizon: float) -> float:
    """Time-0 price of the optimal terminal claim for multiplier nu."""
    gamma, q, scale, shift, slope = _contract_constants(spec)
    m = spec.market
    g_q = g_factor(q, 0.0, horizon, m, nu, slope, 0.0)
    g_1 = g_factor(1.0, 0.0, horizon, m, nu, slope, 0.0)
    return float(scale * nu ** (-1.0 / gamma) * g_q - shift * g_1)


def solve_fixed_horizon(spec: ProblemSpec, horizon: float | None = None) -> FixedHorizonSolution:
    """Deterministic terminal multiplier matching the initial capital.

    Requires a horizon with no interior stopping mass (or an explicit
    horizon date). The budget is strictly decreasing in the multiplier, so
    the root is bracketed by doubling and polished with Brent's method.
    """
    if horizon is None:
        if spec.horizon.dates:
            raise ValueError(
                "fixed-horizon solve needs a degenerate horizon; pass an explicit "
                "horizon date or a spec without interior stopping dates"
            )
        horizon = spec.horizon.terminal
    gamma, q, _, _, _ = _contract_constants(spec)
    x0 = spec.x0

    nu = float((x0 / f_factor(q, 0.0, horizon, spec.market)) ** (-gamma))
    lo = hi = nu
    for _ in range(400):
        if _fixed_budget(lo, spec, horizon) >= x0:
            break
        lo /= 4.0
    else:
        raise ConvergenceError("fixed-horizon budget bracketing failed (low side)", [])
    for _ in range(400):
        if _fixed_budget(hi, spec, horizon) <= x0:
            break
        hi *= 4.0
    else:
        raise ConvergenceError("fixed-horizon budget bracketing failed (high side)", [])
    if lo == hi:
        root = lo
    else:
        root = math.exp(
            brentq(
                lambda u: _fixed_budget(math.exp(u), spec, horizon) - x0,
                math.log(lo),
                math.log(hi),
                xtol=1e-14,
                rtol=8.9e-16,
            )
        )
    residual = abs(_fixed_budget(root, spec, horizon) - x0) / x0
    if residual > 1e-10:
        raise ConvergenceError(
            f"fixed-horizon budget residual {residual:.3e} above 1e-10", [(root, residual)]
        )
    return FixedHorizonSolution(nu=float(root), budget_residual=residual, horizon=horizon)


def _two_date_horizon(spec: ProblemSpec) -> tuple[float, float, float]:
    h = spec.horizon
    if len(h.dates) != 1:
        raise ValueError(
            f"the uncertain-horizon solver handles exactly one interior stopping "
            f"date, got {len(h.dates)}"
        )
    return h.probs[0], h.dates[0], h.terminal


class _InnerKernel:
    """Vectorized solve of the implicit per-path multiplier equation.

    Parametrized by the stop-date multiplier x = nu_T1 on (0, C/p); the
    terminal multiplier follows from the constancy relation. The residual

        F(x) = wealth-from-subdifferential(x H_T1) - priced continuation(nu_T(x))

    is strictly decreasing with F(0+) = +inf and F((C/p)-) = -inf, so log
    bisection always brackets the unique root. A root with x H_T1 above
    the envelope slope at the tangency point is inconsistent with positive
    wealth: that path takes the zero-wealth branch.
    """

    def __init__(self, spec: ProblemSpec, h_T1, w_T1):
        self.spec = spec
        self.p, self.t1, self.T = _two_date_horizon(spec)
        gamma, q, scale, shift, slope = _contract_constants(spec)
        self.gamma, self.q, self.scale, self.shift, self.slope = gamma, q, scale, shift, slope
        m = spec.market
        self.theta = m.theta
        dt = self.T - self.t1
        self.f_q = float(f_factor(q, self.t1, self.T, m))
        self.f_1 = float(f_factor(1.0, self.t1, self.T, m))
        self.s_dt = abs(self.theta) * math.sqrt(dt)
        self.kdrift_T = m.kernel_drift * self.T
        self.h_T1 = np.asarray(h_T1, dtype=float)
        self.w_T1 = np.asarray(w_T1, dtype=float)
        self.h_pow = self.h_T1 ** (-1.0 / gamma)
        self.theta_w = self.theta * self.w_T1

    def _g_levels(self, log_nu):
        """Truncated moment factors g(q, t1, T) and g(1, t1, T) per path."""
        if self.theta == 0.0:
            ind = (log_nu - self.kdrift_T <= math.log(self.slope)).astype(float)
            return self.f_q * ind, self.f_1 * ind
        z_base = (self.theta_w - (log_nu - math.log(self.slope) - self.kdrift_T)) / self.s_dt
        z_q = z_base - self.q * self.s_dt
        z_1 = z_base - self.s_dt
        return self.f_q * ndtr(z_q), self.f_1 * ndtr(z_1)

    def continuation_value(self, nu_T, log_nu_T=None):
        """Stop-date wealth of the optimal terminal claim with multiplier nu_T."""
        if log_nu_T is None:
            log_nu_T = np.log(nu_T)
        g_q, g_1 = self._g_levels(log_nu_T)
        nu_pow = np.exp(-log_nu_T / self.gamma)
        return self.scale * nu_pow * self.h_pow * g_q - self.shift * g_1

    def residual(self, log_x, C: float):
        x = np.exp(log_x)
        nu_T = (C - self.p * x) / (1.0 - self.p)
        stop_wealth = self.scale * np.exp(-log_x / self.gamma) * self.h_pow - self.shift
        return stop_wealth - self.continuation_value(nu_T)

    def solve(self, C: float, iters: int):
        """Per-path root, zero-branch detection, wealth and residuals."""
        if not (C > 0.0):
            raise ValueError(f"multiplier constant must be positive, got {C}")
        cap = math.log(C / self.p)
        n = self.h_T1.shape[0]
        lo = np.full(n, cap - _INNER_LOG_SPAN)
        hi = np.full(n, cap + math.log1p(-1e-13))

        f_lo = self.residual(lo, C)
        f_hi = self.residual(hi, C)
        bad = (f_lo <= 0.0) | (f_hi >= 0.0)
        if np.any(bad):
            raise InnerRootError(
                f"no sign change on the feasible multiplier interval for "
                f"{int(bad.sum())} of {n} paths at C={C!r}"
            )

        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            positive = self.residual(mid, C) > 0.0
            lo = np.where(positive, mid, lo)
            hi = np.where(positive, hi, mid)

        log_x = 0.5 * (lo + hi)
        x = np.exp(log_x)
        nu_T = (C - self.p * x) / (1.0 - self.p)
        residuals = self.residual(log_x, C)

        zero = x * self.h_T1 > self.slope
        nu_T1_out = np.where(zero, np.inf, x)
        nu_T_out = np.where(zero, np.inf, nu_T)
        wealth = inverse_marginal(self.spec.contract, nu_T1_out * self.h_T1)
        return nu_T1_out, nu_T_out, wealth, residuals, zero

    def budget(self, C: float, iters: int = _INNER_ITERS_COARSE) -> float:
        _, _, wealth, _, _ = self.solve(C, iters)
        return float(np.mean(self.h_T1 * wealth))


def solve_inner_nu_T(h_T1, w_T1, C: float, spec: ProblemSpec):
    """Terminal multiplier nu_T for one path state (or arrays of states).

    Returns +inf on the zero-wealth branch. The state must satisfy the
    closed-form relation between h and w; this rules out calling the inner
    solve with mismatched coordinates.
    """
    h_arr = np.atleast_1d(np.asarray(h_T1, dtype=float))
    w_arr = np.atleast_1d(np.asarray(w_T1, dtype=float))
    if h_arr.shape != w_arr.shape:
        raise ValueError("h_T1 and w_T1 must have matching shapes")
    _, t1, _ = _two_date_horizon(spec)
    expected = state_price_density(spec.market, t1, w_arr)
    if not np.allclose(h_arr, expected, rtol=1e-12, atol=0.0):
        raise ValueError("h_T1 inconsistent with w_T1 under the market parameters")
    kernel = _InnerKernel(spec, h_arr, w_arr)
    _, nu_T, _, _, _ = kernel.solve(C, _INNER_ITERS_FINAL)
    if np.isscalar(h_T1) or np.asarray(h_T1).ndim == 0:
        return float(nu_T[0])
    return nu_T


def solve_uncertain_horizon(
    spec: ProblemSpec,
    n_paths: int,
    seed: int,
    budget_tol: float = 1e-3,
    paths: SimulatedPaths | None = None,
    n_workers: int = 1,
) -> SolverSolution:
    """Calibrate the multiplier constant C against the Monte-Carlo budget.

    The budget estimate mean(H_T1 * wealth_T1) is monotone decreasing in C
    (larger multipliers buy less wealth), so C is bracketed by doubling or
    halving from the fixed-horizon multiplier and then bisected until the
    bracket collapses. The reported residual must end up within budget_tol
    or a ConvergenceError with the full evaluation history is raised.

    Common random numbers: the same path draws are reused for every C, so
    the budget function is deterministic and free of cross-iteration noise.
    Pass ``paths`` to share draws with other computations; it must contain
    both horizon dates on its grid.
    """
    if n_paths < 10_000:
        raise ValueError(f"n_paths must be at least 10000, got {n_paths}")
    if not (budget_tol >= 1e-4):
        raise ValueError(f"budget_tol must be at least 1e-4, got {budget_tol}")
    p, t1, T = _two_date_horizon(spec)

    if paths is None:
        paths = simulate_paths(spec.market, [t1, T], n_paths, seed, n_workers=n_workers)
    else:
        if paths.n_paths != n_paths:
            raise ValueError("supplied paths disagree with n_paths")
        for needed in (t1, T):
            if needed not in paths.dates:
                raise ValueError(f"supplied paths lack the horizon date {needed}")
    w_T1, h_T1 = paths.column(t1)
    w_T, h_T = paths.column(T)

    kernel = _InnerKernel(spec, h_T1, w_T1)
    x0 = spec.x0
    history: list[tuple[float, float]] = []

    def budget(C: float) -> float:
        value = kernel.budget(C)
        history.append((C, value))
        return value

    c_init = solve_fixed_horizon(spec, horizon=T).nu
    b_init = budget(c_init)
    lo = hi = c_init
    if b_init > x0:
        for _ in range(_MAX_OUTER_ITERS):
            hi *= 2.0
            if budget(hi) <= x0:
                break
        else:
            raise ConvergenceError("budget bracketing failed (high side)", history)
    elif b_init < x0:
        for _ in range(_MAX_OUTER_ITERS):
            lo /= 2.0
            if budget(lo) >= x0:
                break
        else:
            raise ConvergenceError("budget bracketing failed (low side)", history)

    iterations = len(history)
    while hi - lo > _OUTER_BRACKET_RTOL * hi and iterations < _MAX_OUTER_ITERS:
        mid = 0.5 * (lo + hi)
        if budget(mid) >= x0:
            lo = mid
        else:
            hi = mid
        iterations += 1

    c_star = 0.5 * (lo + hi)
    nu_T1, nu_T, wealth_T1, residuals, zero = kernel.solve(c_star, _INNER_ITERS_FINAL)
    wealth_T = inverse_marginal(spec.contract, nu_T * h_T)
    budget_estimate = float(np.mean(h_T1 * wealth_T1))
    budget_residual = abs(budget_estimate - x0) / x0
    if budget_residual > budget_tol:
        raise ConvergenceError(
            f"budget residual {budget_residual:.3e} above tolerance {budget_tol:.1e} "
            f"after {iterations} iterations",
            history,
        )
    residuals = np.where(zero, np.nan, residuals)

    return SolverSolution(
        spec=spec,
        c_star=float(c_star),
        nu_T1=nu_T1,
        nu_T=nu_T,
        wealth_T1=wealth_T1,
        wealth_T=wealth_T,
        w_T1=np.asarray(w_T1),
        h_T1=np.asarray(h_T1),
        w_T=np.asarray(w_T),
        h_T=np.asarray(h_T),
        inner_residuals=residuals,
        budget_estimate=budget_estimate,
        budget_residual=budget_residual,
        iterations=iterations,
        bracket_history=tuple(history),
        seed=seed,
        n_paths=n_paths,
        budget_tol=budget_tol,
    )


def _require_continuation_multiplier(spec, solution, s, state, nu_T):
    p, t1, T = _two_date_horizon(spec)
    if nu_T is None:
        if not math.isclose(s, t1, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(
                "the terminal multiplier is path specific beyond the stopping date; "
                "pass nu_T from the solution"
            )
        nu_T = solve_inner_nu_T(state.h, state.w, solution.c_star, spec)
    return float(nu_T)


def wealth_at(
    spec: ProblemSpec,
    solution: SolverSolution,
    s: float,
    state: PathState,
    nu_T: float | None = None,
) -> float:
    """Optimal wealth at time s on a path that is still running.

    On [T_1, T] the wealth is the priced continuation of the terminal claim
    (reducing to the subdifferential inverse at both horizon dates); at
    s = 0 it is the calibrated budget. The terminal multiplier of the
    path is recomputed from the T_1 state when not supplied, which is only
    possible at s = T_1. Times in (0, T_1) have no closed form here: the
    stop-date multiplier is not known at s, and pricing it needs nested
    simulation, which the analytics oracle covers instead.
    """
    p, t1, T = _two_date_horizon(spec)
    if s > T:
        raise ValueError(f"time {s} beyond the terminal date {T}")
    if s < 0.0:
        raise ValueError(f"negative time {s}")
    if s == 0.0:
        return solution.budget_estimate
    if s < t1:
        raise ValueError(
            "closed-form wealth is available at s = 0 and on [T_1, T] only"
        )
    if not math.isclose(state.t, s, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError(f"state is at t={state.t}, not at s={s}")
    state.check(spec.market)
    nu_T = _require_continuation_multiplier(spec, solution, s, state, nu_T)
    if not np.isfinite(nu_T):
        return 0.0
    gamma, q, scale, shift, slope = _contract_constants(spec)
    m = spec.market
    g_q = float(g_factor(q, s, T, m, nu_T, slope, state.w))
    g_1 = float(g_factor(1.0, s, T, m, nu_T, slope, state.w))
    return scale * nu_T ** (-1.0 / gamma) * state.h ** (-1.0 / gamma) * g_q - shift * g_1


def strategy_at(
    spec: ProblemSpec,
    solution: SolverSolution,
    s: float,
    state: PathState,
    nu_T: float | None = None,
) -> float:
    """Cash amount in the risky asset at time s in [T_1, T).

    Equals the delta of the closed-form wealth with respect to the stock:
    the usual myopic term plus two Gaussian-density corrections from the
    truncation boundary. Far in the money both corrections vanish and the
    position reverts to the constant-fraction rule.
    """
    p, t1, T = _two_date_horizon(spec)
    if not (t1 <= s < T):
        raise ValueError(f"strategy is defined on [T_1, T) = [{t1}, {T}), got {s}")
    if not math.isclose(state.t, s, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError(f"state is at t={state.t}, not at s={s}")
    state.check(spec.market)
    nu_T = _require_continuation_multiplier(spec, solution, s, state, nu_T)
    if not np.isfinite(nu_T):
        return 0.0
    gamma, q, scale, shift, slope = _contract_constants(spec)
    m = spec.market
    theta, sigma = m.theta, m.sigma
    dt = T - s
    wealth = wealth_at(spec, solution, s, state, nu_T=nu_T)
    g_1 = float(g_factor(1.0, s, T, m, nu_T, slope, state.w))
    f_q = float(f_factor(q, s, T, m))
    f_1 = float(f_factor(1.0, s, T, m))
    if theta == 0.0:
        return 0.0
    s_dt = abs(theta) * math.sqrt(dt)
    z_base = (
        theta * state.w - (math.log(nu_T) - math.log(slope) - m.kernel_drift * T)
    ) / s_dt
    z_q = z_base - q * s_dt
    z_1 = z_base - s_dt
    sgn = math.copysign(1.0, theta)
    myopic = theta / (gamma * sigma) * wealth
    kink = (1.0 / sigma) * shift * (
        theta / gamma * g_1 - sgn * f_1 * float(norm_pdf(z_1)) / math.sqrt(dt)
    )
    boundary = (
        (1.0 / sigma)
        * scale
        * nu_T ** (-1.0 / gamma)
        * state.h ** (-1.0 / gamma)
        * f_q
        * sgn
        * float(norm_pdf(z_q))
        / math.sqrt(dt)
    )
    return myopic + kink + boundary
