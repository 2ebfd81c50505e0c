"""Two-sided matching markets where preferences are revealed by interviews.

Provides the market model (public values, tiers, latent interview noise), an
adaptive interview-augmented deferred-acceptance algorithm, a non-adaptive
plan/resolve pipeline for tiered markets, an exact interim-stability verifier,
and a Monte Carlo experiment harness with a CLI.
"""

from .market import (
    ConfigError,
    InterviewLedger,
    Market,
    MarketConfig,
    MarketShape,
    Matching,
    NoiseModel,
    TierStructure,
    UtilityModel,
    ValueGenerator,
    conduct_interview,
    observed_utility_applicant,
    observed_utility_position,
    sample_market,
)
from .da import DAOutcome, PreferenceTable, deferred_acceptance, rank_of_match
from .adaptive import (
    AdaptiveState,
    MonitorReport,
    ProposalExhaustedError,
    TraceLog,
    adaptive_match,
    adaptive_match_reference,
    check_trace_monitors,
    next_proposal_target,
    replay_events,
)
from .nonadaptive import (
    FailureReport,
    InterviewPlan,
    InvariantViolation,
    NonAdaptiveParams,
    PlanBatch,
    build_plan,
    contiguity_violations,
    plan_degree_stats,
    resolve_plan,
)
from .stability import (
    BlockingPair,
    StabilityVerdict,
    enumerate_interim_stable,
    matching_key,
    verify,
)
from .experiments import (
    SweepConfig,
    SweepSummary,
    TrialReport,
    aggregate,
    derive_trial_seed,
    run_sweep,
    run_trial,
    trials_to_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveState",
    "BlockingPair",
    "ConfigError",
    "DAOutcome",
    "FailureReport",
    "InterviewLedger",
    "InterviewPlan",
    "InvariantViolation",
    "Market",
    "MarketConfig",
    "MarketShape",
    "Matching",
    "MonitorReport",
    "NoiseModel",
    "NonAdaptiveParams",
    "PlanBatch",
    "PreferenceTable",
    "ProposalExhaustedError",
    "StabilityVerdict",
    "SweepConfig",
    "SweepSummary",
    "TierStructure",
    "TraceLog",
    "TrialReport",
    "UtilityModel",
    "ValueGenerator",
    "adaptive_match",
    "adaptive_match_reference",
    "aggregate",
    "build_plan",
    "check_trace_monitors",
    "conduct_interview",
    "contiguity_violations",
    "deferred_acceptance",
    "derive_trial_seed",
    "enumerate_interim_stable",
    "matching_key",
    "next_proposal_target",
    "observed_utility_applicant",
    "observed_utility_position",
    "plan_degree_stats",
    "rank_of_match",
    "replay_events",
    "resolve_plan",
    "run_sweep",
    "run_trial",
    "sample_market",
    "trials_to_csv",
    "verify",
]
