"""Experiment runner: config in, CSV tables out.

Reads a YAML config (all keys optional; defaults reproduce the baseline
parameter set mu=0.08, r=0.03, sigma=0.2, gamma=3, x0=100, p1=0.5, T1=8,
T=12, alpha=0.25, B=50, K=1, mean horizon 10), dispatches one of the
experiments

    merton            closed-form concave solution, MC budget check
    fixed-horizon     contract payoff at the matched fixed horizon
    uncertain-horizon two-date solve plus fixed-horizon comparison
    figure1-sweep     mean-preserving horizon spreads at fixed E[tau]
    figure2-sweep     stopping-probability sweep at fixed dates

and writes solution.csv / summary.csv (sweep.csv for sweeps) with numbers
serialized to 12 significant digits. Identical config and seed give byte
identical files for any worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .analytics import (
    certainty_equivalent,
    compare_to_fixed,
    expected_utility,
    stopped_samples,
    stopped_variance,
)
from .concave import solve_merton
from .market import HorizonDistribution, MarketParams, simulate_paths
from .nonconcave import (
    ConvergenceError,
    ProblemSpec,
    solve_fixed_horizon,
    solve_uncertain_horizon,
)
from .payoff import ContractUtility, PowerUtility, inverse_marginal, payoff_value

__all__ = ["ExperimentConfig", "run", "main"]

EXPERIMENTS = (
    "merton",
    "fixed-horizon",
    "uncertain-horizon",
    "figure1-sweep",
    "figure2-sweep",
)

OUT_DIR_ENV = "HORIZONOPT_OUT_DIR"

_DEFAULTS = {
    "experiment": "uncertain-horizon",
    "market": {"mu": 0.08, "r": 0.03, "sigma": 0.2},
    "contract": {"gamma": 3.0, "alpha": 0.25, "threshold": 50.0, "guarantee": 1.0},
    "horizon": {"dates": [8.0], "probs": [0.5], "terminal": 12.0},
    "x0": 100.0,
    "n_paths": 100_000,
    "seed": 20240811,
    "budget_tol": 1e-3,
    "workers": 1,
    "sweep": {
        "spread_grid": [1.0, 2.0, 3.0, 4.0],
        "prob_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Validated experiment parameters (defaults: baseline table)."""

    experiment: str
    market: MarketParams
    contract: ContractUtility
    horizon: HorizonDistribution
    x0: float
    n_paths: int
    seed: int
    budget_tol: float
    workers: int
    spread_grid: tuple[float, ...]
    prob_grid: tuple[float, ...]

    @property
    def t_tilde(self) -> float:
        return self.horizon.expected_stop

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in _DEFAULTS.items()}
        unknown = set(raw) - set(data)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in raw.items():
            if isinstance(data.get(key), dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config key '{key}' must be a mapping")
                bad = set(value) - set(data[key])
                if bad:
                    raise ConfigError(f"unknown keys under '{key}': {sorted(bad)}")
                data[key].update(value)
            else:
                data[key] = value
        if data["experiment"] not in EXPERIMENTS:
            raise ConfigError(
                f"experiment must be one of {EXPERIMENTS}, got {data['experiment']!r}"
            )
        try:
            market = MarketParams(**{k: float(v) for k, v in data["market"].items()})
            contract = ContractUtility(
                base=PowerUtility(gamma=float(data["contract"]["gamma"])),
                participation=float(data["contract"]["alpha"]),
                threshold=float(data["contract"]["threshold"]),
                guarantee=float(data["contract"]["guarantee"]),
            )
            horizon = HorizonDistribution(
                dates=data["horizon"]["dates"],
                probs=data["horizon"]["probs"],
                terminal=data["horizon"]["terminal"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        n_paths = int(data["n_paths"])
        if n_paths < 1:
            raise ConfigError("n_paths must be positive")
        x0 = float(data["x0"])
        if x0 <= 0:
            raise ConfigError("x0 must be positive")
        return cls(
            experiment=data["experiment"],
            market=market,
            contract=contract,
            horizon=horizon,
            x0=x0,
            n_paths=n_paths,
            seed=int(data["seed"]),
            budget_tol=float(data["budget_tol"]),
            workers=int(data["workers"]),
            spread_grid=tuple(float(d) for d in data["sweep"]["spread_grid"]),
            prob_grid=tuple(float(p) for p in data["sweep"]["prob_grid"]),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_mapping(raw)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _stratified_dates(horizon: HorizonDistribution, n: int) -> np.ndarray:
    """Per-path stopping dates with exact (largest-remainder) counts."""
    probs = np.array(horizon.all_probs)
    ideal = probs * n
    counts = np.floor(ideal).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(ideal - counts))
    counts[order[:short]] += 1
    return np.repeat(np.array(horizon.grid), counts)


def _run_merton(cfg: ExperimentConfig, out: Path) -> str:
    sol = solve_merton(cfg.market, cfg.contract.gamma, cfg.horizon, cfg.x0)
    paths = simulate_paths(
        cfg.market, cfg.horizon.grid, cfg.n_paths, cfg.seed, n_workers=cfg.workers
    )
    dates = _stratified_dates(cfg.horizon, cfg.n_paths)
    gamma = cfg.contract.gamma
    nu = np.array([sol.multiplier(t) for t in cfg.horizon.grid])
    date_index = {t: j for j, t in enumerate(cfg.horizon.grid)}
    cols = np.array([date_index[t] for t in dates])
    h = paths.h[np.arange(cfg.n_paths), cols]
    w = paths.w[np.arange(cfg.n_paths), cols]
    nu_path = nu[cols]
    wealth = (nu_path * h) ** (-1.0 / gamma)

    priced = h * wealth
    budget = float(priced.mean())
    budget_se = float(priced.std(ddof=1) / math.sqrt(cfg.n_paths))
    utilities = wealth ** (1.0 - gamma) / (1.0 - gamma)
    eu = float(utilities.mean())
    eu_se = float(utilities.std(ddof=1) / math.sqrt(cfg.n_paths))
    ce = float(((1.0 - gamma) * eu) ** (1.0 / (1.0 - gamma)))

    _write_csv(
        out / "solution.csv",
        ["path", "stop_date", "w", "h", "nu", "wealth"],
        zip(range(cfg.n_paths), dates, w, h, nu_path, wealth),
    )
    _write_csv(
        out / "summary.csv",
        [
            "experiment", "n_paths", "seed", "fraction",
            "mc_budget", "mc_budget_se", "eu", "eu_se", "ce",
        ],
        [["merton", cfg.n_paths, cfg.seed, sol.fraction, budget, budget_se, eu, eu_se, ce]],
    )
    return f"merton: fraction={sol.fraction:.6f} mc_budget={budget:.4f} (se {budget_se:.4f})"


def _run_fixed(cfg: ExperimentConfig, out: Path) -> str:
    horizon = cfg.t_tilde
    spec = ProblemSpec(cfg.market, cfg.contract, cfg.horizon, cfg.x0)
    fixed = solve_fixed_horizon(spec, horizon=horizon)
    paths = simulate_paths(cfg.market, [horizon], cfg.n_paths, cfg.seed, n_workers=cfg.workers)
    w, h = paths.column(horizon)
    wealth = np.asarray(inverse_marginal(cfg.contract, fixed.nu * h))
    utilities = payoff_value(cfg.contract, wealth)
    eu = float(utilities.mean())
    eu_se = float(utilities.std(ddof=1) / math.sqrt(cfg.n_paths))
    ce = certainty_equivalent(eu, cfg.contract)
    var = float(np.var(wealth, ddof=1))

    _write_csv(
        out / "solution.csv",
        ["path", "stop_date", "w", "h", "nu", "wealth"],
        zip(range(cfg.n_paths), [horizon] * cfg.n_paths, w, h, [fixed.nu] * cfg.n_paths, wealth),
    )
    _write_csv(
        out / "summary.csv",
        [
            "experiment", "n_paths", "seed", "horizon", "nu",
            "budget_residual", "eu", "eu_se", "ce", "variance",
        ],
        [[
            "fixed-horizon", cfg.n_paths, cfg.seed, horizon, fixed.nu,
            fixed.budget_residual, eu, eu_se, ce, var,
        ]],
    )
    return f"fixed-horizon(T={horizon:g}): nu={fixed.nu:.6e} ce={ce:.4f}"


def _run_uncertain(cfg: ExperimentConfig, out: Path) -> str:
    spec = ProblemSpec(cfg.market, cfg.contract, cfg.horizon, cfg.x0)
    sol = solve_uncertain_horizon(
        spec, cfg.n_paths, cfg.seed, budget_tol=cfg.budget_tol, n_workers=cfg.workers
    )
    sset = stopped_samples(spec, sol)
    comparison = compare_to_fixed(spec, sol, cfg.t_tilde)
    eu = expected_utility(sset, cfg.contract)
    var = stopped_variance(sset)
    ce = certainty_equivalent(eu.value, cfg.contract)
    zero_fraction = float(sol.zero_mask.mean())

    t1 = cfg.horizon.dates[0]
    T = cfg.horizon.terminal
    stopped_wealth = sset.wealth
    _write_csv(
        out / "solution.csv",
        [
            "path", "w_t1", "h_t1", "nu_t1", "nu_t",
            "wealth_t1", "wealth_t", "stop_date", "stopped_wealth",
        ],
        zip(
            range(cfg.n_paths), sol.w_T1, sol.h_T1, sol.nu_T1, sol.nu_T,
            sol.wealth_T1, sol.wealth_T, sset.dates, stopped_wealth,
        ),
    )
    _write_csv(
        out / "summary.csv",
        [
            "experiment", "n_paths", "seed", "t1", "terminal", "p1", "x0",
            "c_star", "iterations", "budget_estimate", "budget_residual",
            "zero_fraction", "eu", "eu_se", "ce", "variance", "variance_se",
            "ce_fixed", "ce_diff", "ce_diff_se",
            "var_fixed", "var_diff", "var_diff_se",
        ],
        [[
            "uncertain-horizon", cfg.n_paths, cfg.seed, t1, T,
            cfg.horizon.probs[0], cfg.x0,
            sol.c_star, sol.iterations, sol.budget_estimate, sol.budget_residual,
            zero_fraction, eu.value, eu.se, ce, var.value, var.se,
            comparison.ce_fixed, comparison.ce_diff, comparison.ce_diff_se,
            comparison.var_fixed.value, comparison.var_diff, comparison.var_diff_se,
        ]],
    )
    return (
        f"uncertain-horizon: C={sol.c_star:.6e} budget_residual={sol.budget_residual:.2e} "
        f"ce={ce:.4f} (fixed {comparison.ce_fixed:.4f})"
    )


def _run_figure1(cfg: ExperimentConfig, out: Path) -> str:
    p = cfg.horizon.probs[0] if cfg.horizon.probs else 0.5
    t_tilde = cfg.t_tilde
    rows = []
    for d in cfg.spread_grid:
        t1 = t_tilde - d
        T = t_tilde + d * p / (1.0 - p)
        if not (0.0 < t1 < T):
            raise ConfigError(f"spread {d} leaves no valid horizon around {t_tilde}")
        horizon = HorizonDistribution([t1], [p], T)
        spec = ProblemSpec(cfg.market, cfg.contract, horizon, cfg.x0)
        sol = solve_uncertain_horizon(
            spec, cfg.n_paths, cfg.seed, budget_tol=cfg.budget_tol, n_workers=cfg.workers
        )
        comparison = compare_to_fixed(spec, sol, t_tilde)
        rows.append([
            d, t1, T, horizon.stop_variance,
            comparison.var_uncertain.value, comparison.var_uncertain.se,
            comparison.var_fixed.value, comparison.var_diff, comparison.var_diff_se,
            comparison.ce_uncertain, comparison.ce_fixed,
            comparison.ce_diff, comparison.ce_diff_se,
        ])
    _write_csv(
        out / "sweep.csv",
        [
            "spread", "t1", "terminal", "var_tau",
            "variance", "variance_se", "var_fixed", "var_diff", "var_diff_se",
            "ce", "ce_fixed", "ce_diff", "ce_diff_se",
        ],
        rows,
    )
    return f"figure1-sweep: {len(rows)} spreads around E[tau]={t_tilde:g}"


def _run_figure2(cfg: ExperimentConfig, out: Path) -> str:
    t1 = cfg.horizon.dates[0]
    T = cfg.horizon.terminal
    paths = simulate_paths(cfg.market, [t1, T], cfg.n_paths, cfg.seed, n_workers=cfg.workers)
    rows = []
    prev = None
    for p in cfg.prob_grid:
        horizon = HorizonDistribution([t1], [p], T)
        spec = ProblemSpec(cfg.market, cfg.contract, horizon, cfg.x0)
        sol = solve_uncertain_horizon(
            spec, cfg.n_paths, cfg.seed, budget_tol=cfg.budget_tol, paths=paths
        )
        sset = stopped_samples(spec, sol)
        eu = expected_utility(sset, cfg.contract)
        ce = certainty_equivalent(eu.value, cfg.contract)
        values = payoff_value(cfg.contract, sset.wealth)
        var = stopped_variance(sset)
        if prev is None:
            step = step_se = float("nan")
        else:
            (eu_p, values_p, ce_p) = prev
            from .analytics import _ce_slope

            influence = _ce_slope(eu.value, cfg.contract) * (values - eu.value) - _ce_slope(
                eu_p.value, cfg.contract
            ) * (values_p - eu_p.value)
            step = ce - ce_p
            step_se = float(influence.std(ddof=1) / math.sqrt(cfg.n_paths))
        rows.append([
            p, sol.c_star, sol.budget_residual, eu.value, eu.se,
            ce, var.value, var.se, step, step_se,
        ])
        prev = (eu, values, ce)
    _write_csv(
        out / "sweep.csv",
        [
            "p1", "c_star", "budget_residual", "eu", "eu_se",
            "ce", "variance", "variance_se", "ce_step", "ce_step_se",
        ],
        rows,
    )
    return f"figure2-sweep: {len(rows)} stopping probabilities on ({t1:g}, {T:g})"


_RUNNERS = {
    "merton": _run_merton,
    "fixed-horizon": _run_fixed,
    "uncertain-horizon": _run_uncertain,
    "figure1-sweep": _run_figure1,
    "figure2-sweep": _run_figure2,
}


def run(
    config_path: str | None,
    out_dir: str | None = None,
    seed: int | None = None,
    n_paths: int | None = None,
    workers: int | None = None,
    quiet: bool = False,
) -> int:
    """Execute one experiment; returns the process exit status."""
    try:
        cfg = (
            ExperimentConfig.from_yaml(config_path)
            if config_path
            else ExperimentConfig.from_mapping({})
        )
        if seed is not None:
            cfg.seed = seed
        if n_paths is not None:
            cfg.n_paths = n_paths
        if workers is not None:
            cfg.workers = workers
        out = Path(out_dir or os.environ.get(OUT_DIR_ENV, "out"))
        out.mkdir(parents=True, exist_ok=True)
        summary = _RUNNERS[cfg.experiment](cfg, out)
    except (ConfigError, ValueError, OSError, yaml.YAMLError) as exc:
        json.dump({"error": "invalid-config", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except ConvergenceError as exc:
        record = {
            "error": "non-convergence",
            "message": str(exc),
            "history": [[c, b] for c, b in exc.history],
        }
        json.dump(record, sys.stderr)
        sys.stderr.write("\n")
        return 3
    if not quiet:
        print(f"{summary} -> {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="horizonopt",
        description="Portfolio optimization experiments with an uncertain horizon.",
    )
    parser.add_argument("--config", help="YAML experiment config (defaults: baseline table)")
    parser.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--paths", type=int, help="override the config path count")
    parser.add_argument("--workers", type=int, help="override the simulator worker count")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary line")
    args = parser.parse_args(argv)
    return run(
        args.config,
        out_dir=args.out_dir,
        seed=args.seed,
        n_paths=args.paths,
        workers=args.workers,
        quiet=args.quiet,
    )


if __name__ == "__main__":
    sys.exit(main())
