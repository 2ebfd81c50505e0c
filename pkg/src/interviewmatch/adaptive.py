"""Interview-augmented deferred acceptance with full trace instrumentation.

One proposal is considered per iteration: the lowest-index position that some
unmatched applicant currently targets hears from its favorite such applicant,
and either interviews it, rejects it, or tentatively matches it. Indices are
0-based; all ties break toward the lower index.
"""
from __future__ import annotations

import math
from array import array
from bisect import bisect_left
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Iterator, Optional

from .market import (
    ConfigError,
    InterviewLedger,
    Market,
    Matching,
    observed_utility_applicant,
    observed_utility_position,
)

EVENT_INTERVIEW = 0
EVENT_REJECT = 1
EVENT_MATCH = 2
EVENT_DISPLACE = 3

EVENT_NAMES = {
    EVENT_INTERVIEW: "interview",
    EVENT_REJECT: "reject",
    EVENT_MATCH: "tentative_match",
    EVENT_DISPLACE: "displace",
}


class ProposalExhaustedError(RuntimeError):
    """An unmatched applicant has been rejected by every position."""


@dataclass(frozen=True)
class TraceEvent:
    kind: int
    applicant: int
    position: int
    iteration: int

    @property
    def kind_name(self) -> str:
        return EVENT_NAMES[self.kind]


class TraceLog:
    """Append-only columnar event log; compact enough for millions of events."""

    __slots__ = ("kinds", "applicants", "positions", "iterations")

    def __init__(self) -> None:
        self.kinds = array("b")
        self.applicants = array("i")
        self.positions = array("i")
        self.iterations = array("q")

    def append(self, kind: int, a: int, p: int, iteration: int) -> None:
        self.kinds.append(kind)
        self.applicants.append(a)
        self.positions.append(p)
        self.iterations.append(iteration)

    def extend_rejects(self, applicants: list[int], p: int, first_iteration: int) -> None:
        k = len(applicants)
        if not k:
            return
        self.kinds.frombytes(bytes([EVENT_REJECT]) * k)
        self.applicants.extend(applicants)
        self.positions.extend([p] * k)
        self.iterations.extend(range(first_iteration, first_iteration + k))

    def __len__(self) -> int:
        return len(self.kinds)

    def event(self, i: int) -> TraceEvent:
        return TraceEvent(self.kinds[i], self.applicants[i], self.positions[i], self.iterations[i])

    def __iter__(self) -> Iterator[TraceEvent]:
        for i in range(len(self)):
            yield self.event(i)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TraceLog):
            return NotImplemented
        return (
            self.kinds == other.kinds
            and self.applicants == other.applicants
            and self.positions == other.positions
            and self.iterations == other.iterations
        )

    def iter_jsonl_records(self, market: Market) -> Iterator[dict]:
        """Per-event dicts with the pair's observed utilities at event time."""
        ledger = InterviewLedger()
        for ev in self:
            if ev.kind == EVENT_INTERVIEW:
                ledger.record(ev.applicant, ev.position)
            yield {
                "kind": ev.kind_name,
                "i": ev.applicant,
                "j": ev.position,
                "iteration": ev.iteration,
                "v_obs": observed_utility_applicant(market, ledger, ev.applicant, ev.position),
                "u_obs": observed_utility_position(market, ledger, ev.position, ev.applicant),
            }


@dataclass
class AdaptiveState:
    """Mutable run state: matching, ledger, per-applicant rejections, event log."""

    matching: Matching = field(default_factory=Matching)
    ledger: InterviewLedger = field(default_factory=InterviewLedger)
    rejected: list[set[int]] = field(default_factory=list)
    trace: TraceLog = field(default_factory=TraceLog)

    @classmethod
    def fresh(cls, n: int) -> "AdaptiveState":
        return cls(rejected=[set() for _ in range(n)])


def next_proposal_target(state: AdaptiveState, market: Market, a: int) -> int:
    """The unmatched applicant's best position among those that have not rejected it."""
    if state.matching.position_of(a) is not None:
        raise ValueError(f"applicant {a} is matched; only unmatched applicants propose")
    best_key = None
    best = -1
    rejected = state.rejected[a]
    for p in range(market.m):
        if p in rejected:
            continue
        key = (observed_utility_applicant(market, state.ledger, a, p), -p)
        if best_key is None or key > best_key:
            best_key = key
            best = p
    if best < 0:
        raise ProposalExhaustedError(f"applicant {a} has been rejected by every position")
    return best


def replay_events(market: Market, trace: TraceLog, upto: Optional[int] = None) -> AdaptiveState:
    """Reconstruct the run state implied by the first ``upto`` trace events."""
    state = AdaptiveState.fresh(market.n)
    end = len(trace) if upto is None else upto
    for idx in range(end):
        ev = trace.event(idx)
        a, p = ev.applicant, ev.position
        if ev.kind == EVENT_INTERVIEW:
            state.ledger.record(a, p)
        elif ev.kind == EVENT_REJECT:
            state.rejected[a].add(p)
        elif ev.kind == EVENT_DISPLACE:
            state.matching.unmatch(a, p)
            state.rejected[a].add(p)
        elif ev.kind == EVENT_MATCH:
            state.matching.match(a, p)
        state.trace.append(ev.kind, a, p, ev.iteration)
    return state


def _check_square(market: Market) -> None:
    if market.n != market.m:
        raise ConfigError(f"adaptive matching requires n = m, got {market.n} != {market.m}")


def adaptive_match_reference(market: Market) -> tuple[Matching, InterviewLedger, TraceLog]:
    """Direct, unoptimized transliteration of the adaptive algorithm.

    Used as the replay oracle for the production implementation; supports every
    utility model but runs scans per iteration, so keep sizes small.
    """
    _check_square(market)
    n = market.n
    state = AdaptiveState.fresh(n)
    ledger, trace, matching = state.ledger, state.trace, state.matching
    unmatched = set(range(n))
    beta = [0] * n
    for a in range(n):
        beta[a] = next_proposal_target(state, market, a)

    iteration = 0
    while unmatched:
        iteration += 1
        j = min(beta[a] for a in unmatched)
        candidates = [a for a in unmatched if beta[a] == j]
        i = max(candidates, key=lambda a: (observed_utility_position(market, ledger, j, a), -a))

        holder = matching.applicant_of(j)
        holder_key = None
        if holder is not None:
            holder_key = (observed_utility_position(market, ledger, j, holder), -holder)
        i_key = (observed_utility_position(market, ledger, j, i), -i)

        if (i, j) not in ledger and (i <= j or holder_key is None or i_key > holder_key):
            trace.append(EVENT_INTERVIEW, i, j, iteration)
            ledger.record(i, j)
            beta[i] = next_proposal_target(state, market, i)
        elif holder_key is not None and holder_key > i_key:
            trace.append(EVENT_REJECT, i, j, iteration)
            state.rejected[i].add(j)
            beta[i] = next_proposal_target(state, market, i)
        else:
            if holder is not None:
                trace.append(EVENT_DISPLACE, holder, j, iteration)
                matching.unmatch(holder, j)
                state.rejected[holder].add(j)
                unmatched.add(holder)
                beta[holder] = next_proposal_target(state, market, holder)
            trace.append(EVENT_MATCH, i, j, iteration)
            matching.match(i, j)
            unmatched.discard(i)

    if len(matching) != n:
        raise RuntimeError(f"adaptive run ended with {len(matching)} of {n} pairs matched")
    return matching, ledger, trace


def adaptive_match(market: Market) -> tuple[Matching, InterviewLedger, TraceLog]:
    """Run the adaptive algorithm; deterministic given the market alone.

    The returned matching is perfect and interim stable w.r.t. the returned
    ledger, and every matched pair appears in the ledger. The trace is
    identical to the reference implementation's (tested), the fast path only
    reorganizes the bookkeeping.
    """
    _check_square(market)
    if market.eta_enabled:
        # pre-interview perturbations break the shared static proposal order
        # the fast path exploits; fall through to the generic implementation
        return adaptive_match_reference(market)

    n = market.n
    m = market.m
    u = [float(x) for x in market.applicant_values]
    v = [float(x) for x in market.position_values]
    if market.backend == "dense":
        eps_a_mat, eps_p_mat = market.eps_a, market.eps_p
        eps_a = lambda a, p: float(eps_a_mat[a, p])
        eps_p = lambda p, a: float(eps_p_mat[p, a])
    else:
        eps_a, eps_p = market.eps_applicant, market.eps_position

    ledger = InterviewLedger()
    trace = TraceLog()
    trace_append = trace.append

    # applicant-side state: next untried position in the shared static order
    # (index order, since values are non-increasing with index tie-breaks) plus
    # the interviewed-and-not-rejecting positions with their observed utilities
    static_ptr = [0] * n
    eligible: list[dict[int, float]] = [{} for _ in range(n)]

    # per-position proposal buckets: applicants currently targeting it.
    # static members (pair not interviewed) sorted ascending by index, which is
    # exactly descending by the position-side key (u[a], -a); interviewed
    # members carry their fixed post-interview key.
    bucket_static: list[list[int]] = [[] for _ in range(m)]
    bs_start = [0] * m
    bucket_int: list[list[tuple[tuple[float, int], int]]] = [[] for _ in range(m)]
    live = [0] * m
    heap: list[int] = []

    holder = [-1] * m
    holder_key: list[Optional[tuple[float, int]]] = [None] * m

    bucket_static[0] = list(range(n))
    live[0] = n
    heappush(heap, 0)

    def place(a: int) -> int:
        """Recompute beta(a), insert a into that bucket, return the bucket index."""
        ptr = static_ptr[a]
        best_pos = -1
        best_key: Optional[tuple[float, int]] = None
        if eligible[a]:
            for pos, util in eligible[a].items():
                key = (util, -pos)
                if best_key is None or key > best_key:
                    best_key = key
                    best_pos = pos
        if ptr < m and (best_key is None or (v[ptr], -ptr) > best_key):
            lst = bucket_static[ptr]
            if not lst or a > lst[-1]:
                lst.append(a)
            else:
                lst.insert(bisect_left(lst, a, bs_start[ptr]), a)
            live[ptr] += 1
            if live[ptr] == 1:
                heappush(heap, ptr)
            return ptr
        if best_pos < 0:
            raise ProposalExhaustedError(f"applicant {a} has been rejected by every position")
        key = (u[a] + eps_p(best_pos, a), -a)
        bucket_int[best_pos].append((key, a))
        live[best_pos] += 1
        if live[best_pos] == 1:
            heappush(heap, best_pos)
        return best_pos

    matched = 0
    iteration = 0
    while matched < n:
        while heap and live[heap[0]] == 0:
            heappop(heap)
        if not heap:
            raise RuntimeError("no pending proposals but the matching is not perfect")
        j = heap[0]

        ints = bucket_int[j]
        best_int_key = None
        best_int_at = -1
        for idx, (key, _a) in enumerate(ints):
            if best_int_key is None or key > best_int_key:
                best_int_key = key
                best_int_at = idx
        lst = bucket_static[j]
        st = bs_start[j]
        a_static = lst[st] if st < len(lst) else -1
        static_key = (u[a_static], -a_static) if a_static >= 0 else None

        hk = holder_key[j]
        if static_key is not None and (best_int_key is None or static_key > best_int_key):
            i = a_static
            if i <= j or hk is None or static_key > hk:
                iteration += 1
                trace_append(EVENT_INTERVIEW, i, j, iteration)
                ledger.record(i, j)
                bs_start[j] = st + 1
                live[j] -= 1
                static_ptr[i] = j + 1
                eligible[i][j] = v[j] + eps_a(i, j)
                place(i)
            else:
                # rejection cascade: every remaining static member outranked by
                # the best interviewed member would be rejected in consecutive
                # iterations with nothing else changing, so flush them in bulk
                stop = len(lst)
                if best_int_key is not None:
                    lo, hi = st, stop
                    while lo < hi:
                        mid = (lo + hi) // 2
                        a_mid = lst[mid]
                        if (u[a_mid], -a_mid) > best_int_key:
                            lo = mid + 1
                        else:
                            hi = mid
                    stop = lo
                nxt = j + 1

                def flush_simple(batch: list[int]) -> None:
                    if not batch:
                        return
                    feed = bucket_static[nxt]
                    fs = bs_start[nxt]
                    if len(feed) > fs and batch[0] <= feed[-1]:
                        tail = feed[fs:] + batch
                        tail.sort()
                        del feed[fs:]
                        feed.extend(tail)
                    else:
                        feed.extend(batch)
                    was_empty = live[nxt] == 0
                    live[nxt] += len(batch)
                    if was_empty:
                        heappush(heap, nxt)

                simple: list[int] = []
                k = st
                while k < stop:
                    a = lst[k]
                    k += 1
                    if not eligible[a]:
                        if nxt >= m:
                            raise ProposalExhaustedError(
                                f"applicant {a} has been rejected by every position"
                            )
                        static_ptr[a] = nxt
                        simple.append(a)
                        continue
                    # carries interviewed options: reroute individually, and if
                    # it re-targets a lower-index position the cascade must stop
                    trace.extend_rejects(simple, j, iteration + 1)
                    iteration += len(simple) + 1
                    flush_simple(simple)
                    simple = []
                    trace_append(EVENT_REJECT, a, j, iteration)
                    static_ptr[a] = j + 1
                    if place(a) < j:
                        break
                else:
                    trace.extend_rejects(simple, j, iteration + 1)
                    iteration += len(simple)
                    flush_simple(simple)
                live[j] -= k - st
                bs_start[j] = k
                if k > 512 and k * 2 > len(lst):
                    del lst[:k]
                    bs_start[j] = 0
        else:
            key, i = ints[best_int_at]
            if hk is not None and hk > key:
                iteration += 1
                trace_append(EVENT_REJECT, i, j, iteration)
                ints.pop(best_int_at)
                live[j] -= 1
                del eligible[i][j]
                place(i)
            else:
                iteration += 1
                old = holder[j]
                if old >= 0:
                    trace_append(EVENT_DISPLACE, old, j, iteration)
                    del eligible[old][j]
                    matched -= 1
                    place(old)
                trace_append(EVENT_MATCH, i, j, iteration)
                ints.pop(best_int_at)
                live[j] -= 1
                holder[j] = i
                holder_key[j] = key
                matched += 1

    matching = Matching()
    for j in range(m):
        if holder[j] < 0:
            raise RuntimeError(f"position {j} left unmatched in a square market")
        matching.match(holder[j], j)
    return matching, ledger, trace


@dataclass
class MonitorReport:
    """Hard invariant violations plus soft window counters for one trace."""

    interview_count: int
    claim22_violations: list[tuple[int, int]]
    obs23_violations: list[tuple[int, int]]
    upward_window: float
    upward_window_violations: int
    downward_window: float
    downward_window_violations: int

    @property
    def hard_violation_count(self) -> int:
        return len(self.claim22_violations) + len(self.obs23_violations)

    def to_dict(self) -> dict:
        return {
            "interview_count": self.interview_count,
            "claim22_violations": [list(p) for p in self.claim22_violations],
            "obs23_violations": [list(p) for p in self.obs23_violations],
            "hard_violation_count": self.hard_violation_count,
            "upward_window": self.upward_window,
            "upward_window_violations": self.upward_window_violations,
            "downward_window": self.downward_window,
            "downward_window_violations": self.downward_window_violations,
        }


def check_trace_monitors(trace: TraceLog, market: Market, log_base: float = math.e) -> MonitorReport:
    """Check the run-shape guarantees the analysis promises.

    Hard (must never fire): an interview of an unmatched position where both
    revealed noise terms are non-negative must be followed immediately by the
    tentative match of that pair; and an interview of a_i by p_j with i < j
    requires a_i to have interviewed every position between i and j first.
    Soft (counted, not asserted): interviews outside the high-probability
    index windows i <= j + 8*log n and j <= i + 2000*log^2 n.
    """
    if market.eta_enabled:
        raise ValueError("trace monitors are defined for markets without pre-interview noise")
    values = market.position_values
    if any(values[k] < values[k + 1] for k in range(market.m - 1)):
        raise ValueError("trace monitors expect non-increasing public values")

    n = market.n
    logn = math.log(n) / math.log(log_base) if n > 1 else 0.0
    up_window = 8.0 * logn
    down_window = 2000.0 * logn * logn

    interviewed_mask = [0] * n
    matched = bytearray(market.m)
    claim22: list[tuple[int, int]] = []
    obs23: list[tuple[int, int]] = []
    interviews = 0
    up_violations = 0
    down_violations = 0
    # Claim 2.2: after a qualifying interview the very next event must be the
    # tentative match of that pair
    expect: Optional[tuple[int, int]] = None

    eps_a = market.eps_applicant
    eps_p = market.eps_position
    for kind, a, p in zip(trace.kinds, trace.applicants, trace.positions):
        if expect is not None:
            if kind != EVENT_MATCH or (a, p) != expect:
                claim22.append(expect)
            expect = None
        if kind == EVENT_INTERVIEW:
            interviews += 1
            if a > p + up_window:
                up_violations += 1
            if p > a + down_window:
                down_violations += 1
            if a < p:
                span = p - a
                want = (1 << span) - 1
                if (interviewed_mask[a] >> a) & want != want:
                    obs23.append((a, p))
            interviewed_mask[a] |= 1 << p
            if not matched[p] and eps_a(a, p) >= 0.0 and eps_p(p, a) >= 0.0:
                expect = (a, p)
        elif kind == EVENT_MATCH:
            matched[p] = 1
        elif kind == EVENT_DISPLACE:
            matched[p] = 0
    if expect is not None:
        claim22.append(expect)

    return MonitorReport(
        interview_count=interviews,
        claim22_violations=claim22,
        obs23_violations=obs23,
        upward_window=up_window,
        upward_window_violations=up_violations,
        downward_window=down_window,
        downward_window_violations=down_violations,
    )
