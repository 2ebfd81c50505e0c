"""Monte Carlo harness: seeded trials, sweeps, aggregates, scaling diagnostics."""
from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adaptive import adaptive_match, check_trace_monitors
from .market import ConfigError, MarketConfig, NoiseModel, TierStructure, UtilityModel, ValueGenerator, sample_market
from .nonadaptive import NonAdaptiveParams, build_plan, contiguity_violations, plan_degree_stats, resolve_plan
from .stability import verify

_STREAM_TIERS = 5

SCENARIOS = ("strict", "single-tier", "singleton-applicants", "mixed", "custom")

# one column per TrialReport field that belongs in the data payload; wall_time
# stays out so reruns with equal seeds are byte-identical
CSV_COLUMNS = [
    "n",
    "seed",
    "algorithm",
    "scenario",
    "status",
    "total_interviews",
    "mean_interviews",
    "max_interviews_applicant",
    "max_interviews_position",
    "stable",
    "blocking_pair_count",
    "uninterviewed_match_count",
    "unmatched_count",
    "claim22_violations",
    "obs23_violations",
    "upward_window_violations",
    "downward_window_violations",
    "positivity_fraction",
    "max_plan_degree",
    "contiguity_violations",
    "out_of_regime",
    "error",
]


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: sizes x seeds for a single algorithm and tier scenario."""

    sizes: tuple[int, ...]
    seeds_per_size: int = 1
    algorithm: str = "adaptive"
    tier_scenario: str = "strict"
    sweep_seed: int = 0
    spacing: float = 1.0
    tier_gap: float = 10.0
    epsilon_family: str = "uniform"
    epsilon_half_width: float = 1.0
    eta_enabled: bool = False
    eta_half_width: float = 1.0
    custom_applicant_tiers: Optional[tuple[int, ...]] = None
    custom_position_tiers: Optional[tuple[int, ...]] = None
    delta: Optional[int] = None
    theta: Optional[int] = None
    log_base: float = math.e
    monitors_enabled: bool = True
    trial_timeout: Optional[float] = None
    jobs: int = 1

    def __post_init__(self) -> None:
        sizes = tuple(int(x) for x in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes or any(x < 1 for x in sizes):
            raise ConfigError("sizes must be positive")
        if any(a >= b for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("sizes must be strictly increasing")
        if self.seeds_per_size < 1:
            raise ConfigError("seeds_per_size must be at least 1")
        if self.algorithm not in ("adaptive", "nonadaptive"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.tier_scenario not in SCENARIOS:
            raise ConfigError(f"unknown tier scenario {self.tier_scenario!r}")
        if self.tier_scenario == "custom" and (
            self.custom_applicant_tiers is None or self.custom_position_tiers is None
        ):
            raise ConfigError("custom scenario needs explicit tier boundaries")

    def params_for(self, n: int) -> NonAdaptiveParams:
        if self.delta is None and self.theta is None:
            return NonAdaptiveParams.defaults(n, self.log_base)
        defaults = NonAdaptiveParams.defaults(n, self.log_base)
        delta = self.delta if self.delta is not None else defaults.delta
        theta = self.theta if self.theta is not None else max(defaults.theta, delta)
        return NonAdaptiveParams(delta=delta, theta=theta)

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "seeds_per_size": self.seeds_per_size,
            "algorithm": self.algorithm,
            "tier_scenario": self.tier_scenario,
            "sweep_seed": self.sweep_seed,
            "spacing": self.spacing,
            "tier_gap": self.tier_gap,
            "epsilon": {"family": self.epsilon_family, "half_width": self.epsilon_half_width},
            "eta": {"enabled": self.eta_enabled, "half_width": self.eta_half_width},
            "custom_applicant_tiers": list(self.custom_applicant_tiers) if self.custom_applicant_tiers else None,
            "custom_position_tiers": list(self.custom_position_tiers) if self.custom_position_tiers else None,
            "delta": self.delta,
            "theta": self.theta,
            "log_base": self.log_base,
            "monitors_enabled": self.monitors_enabled,
            "trial_timeout": self.trial_timeout,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        eps = d.get("epsilon", {})
        eta = d.get("eta", {})
        return cls(
            sizes=tuple(d["sizes"]),
            seeds_per_size=int(d.get("seeds_per_size", 1)),
            algorithm=d.get("algorithm", "adaptive"),
            tier_scenario=d.get("tier_scenario", "strict"),
            sweep_seed=int(d.get("sweep_seed", 0)),
            spacing=float(d.get("spacing", 1.0)),
            tier_gap=float(d.get("tier_gap", 10.0)),
            epsilon_family=eps.get("family", "uniform"),
            epsilon_half_width=float(eps.get("half_width", 1.0)),
            eta_enabled=bool(eta.get("enabled", False)),
            eta_half_width=float(eta.get("half_width", 1.0)),
            custom_applicant_tiers=tuple(d["custom_applicant_tiers"]) if d.get("custom_applicant_tiers") else None,
            custom_position_tiers=tuple(d["custom_position_tiers"]) if d.get("custom_position_tiers") else None,
            delta=d.get("delta"),
            theta=d.get("theta"),
            log_base=float(d.get("log_base", math.e)),
            monitors_enabled=bool(d.get("monitors_enabled", True)),
            trial_timeout=d.get("trial_timeout"),
            jobs=int(d.get("jobs", 1)),
        )


def derive_trial_seed(sweep_seed: int, n: int, trial_index: int) -> int:
    """Stable per-trial seed; adding sizes or seeds never perturbs existing trials."""
    digest = hashlib.blake2b(
        f"{sweep_seed}:{n}:{trial_index}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") >> 1


def _mixed_boundaries(n: int, delta: int, rng: np.random.Generator) -> tuple[int, ...]:
    large = max(2, n // 3)
    sizes = []
    remaining = n
    while remaining > 0:
        options = sorted({s for s in (1, delta - 1, delta, delta + 1, large) if 1 <= s <= remaining})
        pick = int(options[rng.integers(len(options))])
        sizes.append(pick)
        remaining -= pick
    bounds = [0]
    for s in sizes:
        bounds.append(bounds[-1] + s)
    return tuple(bounds)


def market_config_for_trial(config: SweepConfig, n: int, trial_seed: int) -> MarketConfig:
    """Materialize the tier scenario for one trial; deterministic in the trial seed."""
    utility = UtilityModel(
        epsilon=NoiseModel(config.epsilon_family, config.epsilon_half_width),
        eta_enabled=config.eta_enabled,
        eta=NoiseModel("uniform", config.eta_half_width),
        tier_gap=config.tier_gap,
    )
    scenario = config.tier_scenario
    if scenario == "strict":
        return MarketConfig.strict(n, spacing=config.spacing, utility=utility)
    if scenario == "single-tier":
        a_bounds: tuple[int, ...] = (0, n)
        p_bounds: tuple[int, ...] = (0, n)
    elif scenario == "singleton-applicants":
        a_bounds = tuple(range(n + 1))
        p_bounds = (0, n)
    elif scenario == "mixed":
        delta = min(config.params_for(n).delta, n)
        rng = np.random.Generator(np.random.Philox(key=[trial_seed, _STREAM_TIERS]))
        a_bounds = _mixed_boundaries(n, delta, rng)
        p_bounds = _mixed_boundaries(n, delta, rng)
    else:
        a_bounds = tuple(config.custom_applicant_tiers or ())
        p_bounds = tuple(config.custom_position_tiers or ())
    return MarketConfig(
        n=n,
        m=n,
        applicant_tiers=TierStructure(a_bounds),
        position_tiers=TierStructure(p_bounds),
        utility=utility,
        values=ValueGenerator("tiered"),
    )


@dataclass
class TrialReport:
    """One row of sweep output; every quantity is derived from a single run."""

    n: int
    seed: int
    algorithm: str
    scenario: str
    status: str = "ok"
    total_interviews: int = 0
    mean_interviews: float = 0.0
    max_interviews_applicant: int = 0
    max_interviews_position: int = 0
    stable: bool = False
    blocking_pair_count: int = 0
    uninterviewed_match_count: int = 0
    unmatched_count: int = 0
    claim22_violations: int = 0
    obs23_violations: int = 0
    upward_window_violations: int = 0
    downward_window_violations: int = 0
    positivity_fraction: float = 1.0
    max_plan_degree: int = 0
    contiguity_violations: int = 0
    out_of_regime: bool = False
    error: str = ""
    wall_time: float = 0.0

    def to_csv_row(self) -> list[str]:
        def fmt(x) -> str:
            if isinstance(x, bool):
                return "true" if x else "false"
            if isinstance(x, float):
                return repr(x)
            return str(x)

        return [fmt(getattr(self, col)) for col in CSV_COLUMNS]

    def to_dict(self) -> dict:
        d = {col: getattr(self, col) for col in CSV_COLUMNS}
        return d


def run_market_trial(
    market,
    algorithm: str,
    params: Optional[NonAdaptiveParams] = None,
    log_base: float = math.e,
    monitors_enabled: bool = True,
    plan_seed: int = 0,
    plan=None,
) -> tuple[TrialReport, dict]:
    """Run one algorithm on an already-sampled market; returns report + artifacts.

    Artifacts hold the matching, ledger, and the trace or plan, for callers
    that export them. Raises on failure; run_trial wraps this with error
    capture and timing.
    """
    report = TrialReport(n=market.n, seed=market.seed, algorithm=algorithm, scenario="custom")
    artifacts: dict = {}
    if algorithm == "adaptive":
        matching, ledger, trace = adaptive_match(market)
        verdict = verify(market, ledger, matching)
        artifacts["trace"] = trace
        if monitors_enabled and not market.eta_enabled:
            monitors = check_trace_monitors(trace, market, log_base)
            artifacts["monitors"] = monitors
            report.claim22_violations = len(monitors.claim22_violations)
            report.obs23_violations = len(monitors.obs23_violations)
            report.upward_window_violations = monitors.upward_window_violations
            report.downward_window_violations = monitors.downward_window_violations
    elif algorithm == "nonadaptive":
        if plan is None:
            if params is None:
                params = NonAdaptiveParams.defaults(market.n, log_base)
            plan = build_plan(market.shape, params, plan_seed)
        matching, ledger, failure = resolve_plan(market, plan)
        verdict = failure.verdict
        artifacts["plan"] = plan
        artifacts["failure"] = failure
        report.positivity_fraction = failure.positivity_fraction
        report.out_of_regime = plan.out_of_regime
        deg_a, deg_p = plan_degree_stats(plan)
        report.max_plan_degree = int(max(deg_a.max(), deg_p.max()))
        if monitors_enabled:
            report.contiguity_violations = len(contiguity_violations(plan))
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    artifacts["matching"] = matching
    artifacts["ledger"] = ledger
    a_counts, p_counts = ledger.counts(market.n, market.m)
    report.total_interviews = len(ledger)
    report.mean_interviews = 2.0 * len(ledger) / (market.n + market.m)
    report.max_interviews_applicant = int(a_counts.max()) if market.n else 0
    report.max_interviews_position = int(p_counts.max()) if market.m else 0
    report.stable = (
        verdict.is_interim_stable
        and not verdict.unmatched_applicants
        and not verdict.unmatched_positions
    )
    report.blocking_pair_count = len(verdict.blocking_pairs)
    report.uninterviewed_match_count = len(verdict.uninterviewed_matches)
    report.unmatched_count = len(verdict.unmatched_applicants) + len(verdict.unmatched_positions)
    return report, artifacts


def run_trial(config: SweepConfig, n: int, seed: int) -> TrialReport:
    """Sample -> run algorithm -> verify -> monitors. Deterministic in (config, n, seed)."""
    start = time.perf_counter()
    try:
        market_config = market_config_for_trial(config, n, seed)
        market = sample_market(market_config, seed)
        report, _ = run_market_trial(
            market,
            config.algorithm,
            params=config.params_for(n) if config.algorithm == "nonadaptive" else None,
            log_base=config.log_base,
            monitors_enabled=config.monitors_enabled,
            plan_seed=seed,
        )
    except Exception as exc:  # a trial error aborts the trial, not the sweep
        report = TrialReport(n=n, seed=seed, algorithm=config.algorithm, scenario=config.tier_scenario)
        report.status = "error"
        report.error = f"{type(exc).__name__}: {exc}"
    report.n = n
    report.seed = seed
    report.scenario = config.tier_scenario
    report.wall_time = time.perf_counter() - start
    if (
        config.trial_timeout is not None
        and report.status == "ok"
        and report.wall_time > config.trial_timeout
    ):
        report.status = "timeout"
    return report


def _trial_worker(args: tuple[SweepConfig, int, int]) -> TrialReport:
    config, n, seed = args
    return run_trial(config, n, seed)


@dataclass
class SweepSummary:
    config: SweepConfig
    reports: list[TrialReport]
    per_size: dict[int, dict] = field(default_factory=dict)
    scaling: dict = field(default_factory=dict)
    total_wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "per_size": {str(n): stats for n, stats in sorted(self.per_size.items())},
            "scaling": self.scaling,
            "trials": [r.to_dict() for r in self.reports],
            "metadata": {"total_wall_time": self.total_wall_time},
        }


def aggregate(config: SweepConfig, reports: list[TrialReport]) -> SweepSummary:
    """Reduce trial reports in canonical (n, seed) order; order of arrival is irrelevant."""
    reports = sorted(reports, key=lambda r: (r.n, r.seed))
    per_size: dict[int, dict] = {}
    for n in config.sizes:
        rows = [r for r in reports if r.n == n]
        ok = [r for r in rows if r.status == "ok"]
        max_counts = [max(r.max_interviews_applicant, r.max_interviews_position) for r in ok]
        stats = {
            "trials": len(rows),
            "completed": len(ok),
            "errors": sum(1 for r in rows if r.status == "error"),
            "timeouts": sum(1 for r in rows if r.status == "timeout"),
            "stability_failures": sum(1 for r in ok if not r.stable),
            "stability_failure_rate": (
                sum(1 for r in ok if not r.stable) / len(ok) if ok else float("nan")
            ),
            "median_max_interviews": float(np.median(max_counts)) if max_counts else float("nan"),
            "p95_max_interviews": float(np.percentile(max_counts, 95)) if max_counts else float("nan"),
            "max_max_interviews": max(max_counts) if max_counts else 0,
            "median_total_interviews": (
                float(np.median([r.total_interviews for r in ok])) if ok else float("nan")
            ),
            "hard_monitor_violations": sum(r.claim22_violations + r.obs23_violations for r in ok),
            "runs_with_upward_window_violation": sum(1 for r in ok if r.upward_window_violations > 0),
            "runs_with_downward_window_violation": sum(1 for r in ok if r.downward_window_violations > 0),
            "min_positivity_fraction": min((r.positivity_fraction for r in ok), default=float("nan")),
        }
        per_size[n] = stats

    scaling: dict = {}
    usable = [
        (n, per_size[n]["median_max_interviews"])
        for n in config.sizes
        if per_size[n]["completed"] > 0 and per_size[n]["median_max_interviews"] > 0
    ]
    if len(usable) >= 2:
        ns = np.array([n for n, _ in usable], dtype=float)
        med = np.array([m for _, m in usable], dtype=float)
        scaling["median_max_by_size"] = {str(int(n)): float(m) for n, m in usable}
        scaling["ratio_last_over_first"] = float(med[-1] / med[0])
        scaling["slope_vs_log_n"] = float(np.polyfit(np.log(ns), np.log(med), 1)[0])
        if (np.log(ns) > 0).all():
            scaling["slope_vs_loglog_n"] = float(
                np.polyfit(np.log(np.log(ns)), np.log(med), 1)[0]
            )
    return SweepSummary(config=config, reports=reports, per_size=per_size, scaling=scaling)


def run_sweep(config: SweepConfig) -> SweepSummary:
    """Run every (size, seed) trial and aggregate. Trials are independent."""
    start = time.perf_counter()
    tasks = [
        (n, derive_trial_seed(config.sweep_seed, n, k))
        for n in config.sizes
        for k in range(config.seeds_per_size)
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(_trial_worker, [(config, n, s) for n, s in tasks]))
    else:
        reports = [run_trial(config, n, s) for n, s in tasks]
    summary = aggregate(config, reports)
    summary.total_wall_time = time.perf_counter() - start
    return summary


def trials_to_csv(reports: list[TrialReport]) -> str:
    """Fixed-column CSV, one row per trial, no timing data."""
    lines = [",".join(CSV_COLUMNS)]
    for r in sorted(reports, key=lambda r: (r.n, r.seed)):
        lines.append(",".join(r.to_csv_row()))
    return "\n".join(lines) + "\n"
