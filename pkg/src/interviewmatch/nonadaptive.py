"""Non-adaptive interview plans for tiered markets, built blind and resolved in batches.

Plan construction walks the two tier ladders top-down, emitting one edge batch
per iteration (complete join, low-index block, or random sampling, depending on
how the current effective cardinalities compare to delta) while tracking how
many vertices of each tier are predicted to still be unmatched. Resolution
interviews every planned edge and then runs deferred acceptance batch by batch
on the still-unmatched endpoints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .da import PreferenceTable, deferred_acceptance, rank_of_match
from .market import (
    ConfigError,
    InterviewLedger,
    Market,
    MarketShape,
    Matching,
    TierStructure,
)
from .stability import StabilityVerdict, verify

_STREAM_PLAN = 4


class InvariantViolation(RuntimeError):
    """An internal bookkeeping invariant of plan construction was broken."""


@dataclass(frozen=True)
class NonAdaptiveParams:
    """Interview budget (delta) and removal slack (theta) for plan construction."""

    delta: int
    theta: int

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ConfigError(f"delta must be at least 1, got {self.delta}")
        if self.theta < self.delta:
            raise ConfigError(f"theta ({self.theta}) must be at least delta ({self.delta})")

    @classmethod
    def defaults(cls, n: int, log_base: float = math.e) -> "NonAdaptiveParams":
        """delta = ceil(36 log^2 n), theta = ceil(72 log^3 n)."""
        logn = math.log(n) / math.log(log_base) if n > 1 else 1.0
        delta = max(1, math.ceil(36.0 * logn**2))
        theta = max(delta, math.ceil(72.0 * logn**3))
        return cls(delta=delta, theta=theta)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "theta": self.theta}


@dataclass
class PlanBatch:
    edges: list[tuple[int, int]]  # (applicant, position), construction order
    direction: str  # which side proposes when the batch is resolved
    case: int  # 1 complete join, 2 low-index block, 3 random sampling

    def applicants(self) -> set[int]:
        return {a for a, _ in self.edges}

    def positions(self) -> set[int]:
        return {p for _, p in self.edges}


@dataclass
class InterviewPlan:
    """Ordered edge batches with proposing directions; built before any noise is seen."""

    shape: MarketShape
    delta: int  # effective (possibly clamped) value used by construction
    theta: int
    requested_delta: int
    seed: int
    out_of_regime: bool
    batches: list[PlanBatch] = field(default_factory=list)

    @property
    def batch_count(self) -> int:
        return len(self.batches)

    def edge_count(self) -> int:
        return sum(len(b.edges) for b in self.batches)

    def to_dict(self) -> dict:
        return {
            "n": self.shape.n,
            "m": self.shape.m,
            "applicant_tiers": list(self.shape.applicant_tiers.boundaries),
            "position_tiers": list(self.shape.position_tiers.boundaries),
            "delta": self.delta,
            "theta": self.theta,
            "requested_delta": self.requested_delta,
            "seed": self.seed,
            "out_of_regime": self.out_of_regime,
            "batches": [
                {"case": b.case, "direction": b.direction, "edges": [list(e) for e in b.edges]}
                for b in self.batches
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "InterviewPlan":
        shape = MarketShape(
            n=int(d["n"]),
            m=int(d["m"]),
            applicant_tiers=TierStructure(tuple(d["applicant_tiers"])),
            position_tiers=TierStructure(tuple(d["position_tiers"])),
        )
        return cls(
            shape=shape,
            delta=int(d["delta"]),
            theta=int(d["theta"]),
            requested_delta=int(d["requested_delta"]),
            seed=int(d["seed"]),
            out_of_regime=bool(d["out_of_regime"]),
            batches=[
                PlanBatch(
                    edges=[(int(a), int(p)) for a, p in b["edges"]],
                    direction=str(b["direction"]),
                    case=int(b["case"]),
                )
                for b in d["batches"]
            ],
        )

    @classmethod
    def from_json(cls, text: str) -> "InterviewPlan":
        return cls.from_dict(json.loads(text))


class _TierState:
    __slots__ = ("side", "vertices", "e")

    def __init__(self, side: str, vertices: list[int]):
        self.side = side
        self.vertices = vertices
        self.e = len(vertices)


def _tier_states(side: str, tiers: TierStructure) -> list[_TierState]:
    return [_TierState(side, list(tiers.members(l))) for l in range(tiers.tier_count)]


def _top_nonempty(states: list[_TierState]) -> Optional[_TierState]:
    for t in states:
        if t.vertices:
            return t
    return None


def build_plan(shape: MarketShape, params: NonAdaptiveParams, seed: int) -> InterviewPlan:
    """Construct the interview plan for a tiered market shape.

    Takes only the shape (sizes and tiers), never latent noise, so
    non-adaptivity holds structurally. Deterministic in (shape, params, seed).
    """
    if shape.n != shape.m:
        raise ConfigError(f"plan construction requires n = m, got {shape.n} != {shape.m}")
    n = shape.n
    delta = params.delta
    out_of_regime = delta > n
    if out_of_regime:
        delta = n
    theta = params.theta
    cap = 4 * theta

    rng = np.random.Generator(np.random.Philox(key=[seed & ((1 << 64) - 1), _STREAM_PLAN]))
    a_states = _tier_states("A", shape.applicant_tiers)
    p_states = _tier_states("P", shape.position_tiers)
    deg_a = np.zeros(shape.n, dtype=np.int64)
    deg_p = np.zeros(shape.m, dtype=np.int64)
    batches: list[PlanBatch] = []

    def check_invariants() -> None:
        for t in a_states + p_states:
            if not t.e <= len(t.vertices) <= t.e + theta:
                raise InvariantViolation(
                    f"tier bookkeeping broken: e={t.e}, size={len(t.vertices)}, theta={theta}"
                )

    while True:
        top_a = _top_nonempty(a_states)
        top_p = _top_nonempty(p_states)
        if top_a is None or top_p is None:
            break
        # short side proposes; ties go to the applicant side
        if top_a.e <= top_p.e:
            x, y = top_a, top_p
        else:
            x, y = top_p, top_a

        gap = len(y.vertices) - y.e
        if y.e <= delta:
            case = 1
            partners = list(y.vertices)
            raw_edges = [(xv, yv) for xv in x.vertices for yv in partners]
            y.e -= x.e
        elif x.e <= delta:
            case = 2
            partners = y.vertices[: delta + gap]
            raw_edges = [(xv, yv) for xv in x.vertices for yv in partners]
            y.e -= x.e
        else:
            case = 3
            pool = y.vertices[: x.e + gap]
            want = delta + gap
            raw_edges = []
            for xv in x.vertices:
                picks = rng.choice(len(pool), size=want, replace=False)
                picks.sort()
                raw_edges.extend((xv, pool[k]) for k in picks)
            del y.vertices[: len(pool)]
            y.e -= x.e
            if y.e != len(y.vertices):
                raise InvariantViolation("case-3 bookkeeping drifted from the remaining vertices")

        if x.side == "A":
            direction = "applicant"
            edges = raw_edges
        else:
            direction = "position"
            edges = [(av, pv) for pv, av in raw_edges]
        for a, p in edges:
            deg_a[a] += 1
            deg_p[p] += 1
        if deg_a.max(initial=0) > cap or deg_p.max(initial=0) > cap:
            raise InvariantViolation(f"per-vertex interview count exceeded the safety cap {cap}")

        batches.append(PlanBatch(edges=edges, direction=direction, case=case))

        x.vertices.clear()
        x.e = 0
        if y.e == 0:
            y.vertices.clear()
        overflow = len(y.vertices) - y.e - theta
        if overflow > 0:
            del y.vertices[:overflow]
        check_invariants()

    if any(t.vertices for t in a_states + p_states):
        raise InvariantViolation("plan construction ended before removing every vertex")
    return InterviewPlan(
        shape=shape,
        delta=delta,
        theta=theta,
        requested_delta=params.delta,
        seed=seed,
        out_of_regime=out_of_regime,
        batches=batches,
    )


def plan_degree_stats(plan: InterviewPlan) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex interview counts, summed over all batches."""
    deg_a = np.zeros(plan.shape.n, dtype=np.int64)
    deg_p = np.zeros(plan.shape.m, dtype=np.int64)
    for batch in plan.batches:
        for a, p in batch.edges:
            deg_a[a] += 1
            deg_p[p] += 1
    return deg_a, deg_p


def contiguity_violations(plan: InterviewPlan) -> list[tuple[str, int]]:
    """Vertices whose batch memberships do not form one contiguous index interval."""
    first_a: dict[int, int] = {}
    last_a: dict[int, int] = {}
    count_a: dict[int, int] = {}
    first_p: dict[int, int] = {}
    last_p: dict[int, int] = {}
    count_p: dict[int, int] = {}
    for k, batch in enumerate(plan.batches):
        for v in batch.applicants():
            first_a.setdefault(v, k)
            last_a[v] = k
            count_a[v] = count_a.get(v, 0) + 1
        for v in batch.positions():
            first_p.setdefault(v, k)
            last_p[v] = k
            count_p[v] = count_p.get(v, 0) + 1
    bad = [
        ("applicant", v)
        for v in first_a
        if count_a[v] != last_a[v] - first_a[v] + 1
    ]
    bad += [
        ("position", v)
        for v in first_p
        if count_p[v] != last_p[v] - first_p[v] + 1
    ]
    return sorted(bad)


@dataclass
class FailureReport:
    """Everything that went wrong (or did not) while resolving a plan."""

    verdict: StabilityVerdict
    unmatched_applicants: list[int]
    unmatched_positions: list[int]
    short_side_matched: int
    short_side_positive: int
    max_match_rank: int

    @property
    def failed(self) -> bool:
        return bool(
            not self.verdict.is_interim_stable
            or self.unmatched_applicants
            or self.unmatched_positions
        )

    @property
    def positivity_fraction(self) -> float:
        if self.short_side_matched == 0:
            return 1.0
        return self.short_side_positive / self.short_side_matched

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.to_dict(),
            "unmatched_applicants": self.unmatched_applicants,
            "unmatched_positions": self.unmatched_positions,
            "short_side_matched": self.short_side_matched,
            "short_side_positive": self.short_side_positive,
            "positivity_fraction": self.positivity_fraction,
            "max_match_rank": self.max_match_rank,
        }


def _positive_interest(market: Market, a: int, p: int, proposer_is_applicant: bool) -> bool:
    # under the pre-interview perturbation model the success predicate becomes
    # eta + eps > 1 instead of eps > 0
    if proposer_is_applicant:
        noise = market.eps_applicant(a, p)
        eta = market.eta_applicant(a, p)
    else:
        noise = market.eps_position(p, a)
        eta = market.eta_position(p, a)
    if market.eta_enabled:
        return eta + noise > 1.0
    return noise > 0.0


def resolve_plan(
    market: Market, plan: InterviewPlan
) -> tuple[Matching, InterviewLedger, FailureReport]:
    """Interview every planned edge, then clear batches in order via DA.

    Each batch's deferred acceptance runs only on its currently-unmatched
    endpoints, with preferences given by observed utilities. Failures
    (unmatched vertices, blocking pairs) are reported, never hidden.
    """
    if market.shape != plan.shape:
        raise ConfigError("plan was built for a different market shape")
    if market.config.values.kind != "tiered":
        raise ConfigError("plan resolution requires a tiered market (tier-constant values)")

    ledger = InterviewLedger()
    for batch in plan.batches:
        for a, p in batch.edges:
            ledger.record(a, p)

    matching = Matching()
    short_matched = 0
    short_positive = 0
    max_rank = 0

    for batch in plan.batches:
        live_edges = [
            (a, p)
            for a, p in batch.edges
            if matching.position_of(a) is None and matching.applicant_of(p) is None
        ]
        if not live_edges:
            continue
        proposer_is_applicant = batch.direction == "applicant"

        by_proposer: dict[int, list[int]] = {}
        receivers: set[int] = set()
        for a, p in live_edges:
            if proposer_is_applicant:
                by_proposer.setdefault(a, []).append(p)
                receivers.add(p)
            else:
                by_proposer.setdefault(p, []).append(a)
                receivers.add(a)

        proposer_ids = sorted(by_proposer)
        receiver_ids = sorted(receivers)
        r_local = {r: k for k, r in enumerate(receiver_ids)}

        if proposer_is_applicant:
            def prop_util(i: int, r: int) -> float:
                return market.position_values[r] + market.eta_applicant(i, r) + market.eps_applicant(i, r)

            def recv_util(r: int, i: int) -> float:
                return market.applicant_values[i] + market.eta_position(r, i) + market.eps_position(r, i)
        else:
            def prop_util(i: int, r: int) -> float:
                return market.applicant_values[r] + market.eta_position(i, r) + market.eps_position(i, r)

            def recv_util(r: int, i: int) -> float:
                return market.position_values[i] + market.eta_applicant(r, i) + market.eps_applicant(r, i)

        lists = []
        for i in proposer_ids:
            partners = sorted(by_proposer[i], key=lambda r: (-prop_util(i, r), r))
            lists.append([r_local[r] for r in partners])
        prefs = PreferenceTable(
            proposer_prefs=lists,
            receiver_utility=lambda rl, il: recv_util(receiver_ids[rl], proposer_ids[il]),
            n_receivers=len(receiver_ids),
        )
        outcome = deferred_acceptance(prefs, keep_log=False)

        for il, rl in outcome.matching.applicant_to_position.items():
            i, r = proposer_ids[il], receiver_ids[rl]
            a, p = (i, r) if proposer_is_applicant else (r, i)
            matching.match(a, p)
            rank = rank_of_match(outcome, il)
            if rank is not None and rank > max_rank:
                max_rank = rank
            if batch.case in (2, 3):
                short_matched += 1
                if _positive_interest(market, a, p, proposer_is_applicant):
                    short_positive += 1

    verdict = verify(market, ledger, matching)
    report = FailureReport(
        verdict=verdict,
        unmatched_applicants=verdict.unmatched_applicants,
        unmatched_positions=verdict.unmatched_positions,
        short_side_matched=short_matched,
        short_side_positive=short_positive,
        max_match_rank=max_rank,
    )
    return matching, ledger, report
