import math
import random

import pytest

from interviewmatch.adaptive import (
    EVENT_DISPLACE,
    EVENT_INTERVIEW,
    EVENT_MATCH,
    EVENT_REJECT,
    AdaptiveState,
    ProposalExhaustedError,
    TraceLog,
    adaptive_match,
    adaptive_match_reference,
    check_trace_monitors,
    next_proposal_target,
    replay_events,
)
from interviewmatch.market import (
    ConfigError,
    InterviewLedger,
    Market,
    MarketConfig,
    TierStructure,
    UtilityModel,
    ValueGenerator,
    sample_market,
)
from interviewmatch.stability import verify
from tests_support import da_on_true_utilities


def crafted_market(eps_a, eps_p, u, v):
    """Market with hand-picked noise; values must be evenly spaced (strict generator)."""
    n, m = len(eps_a), len(eps_a[0])
    spacing = u[0] - u[1] if n > 1 else 1.0
    config = MarketConfig.strict(n, m, spacing=spacing)
    return Market.from_dict(
        {
            "config": config.to_dict(),
            "seed": 0,
            "applicant_values": u,
            "position_values": v,
            "eps_a": eps_a,
            "eps_p": eps_p,
            "eta_a": None,
            "eta_p": None,
        }
    )


def mixed_tiered_config(n, seed):
    rng = random.Random(seed)
    def bounds():
        out = [0]
        while out[-1] < n:
            out.append(min(n, out[-1] + rng.randint(1, max(1, n // 2))))
        return tuple(out)
    return MarketConfig(
        n=n,
        m=n,
        applicant_tiers=TierStructure(bounds()),
        position_tiers=TierStructure(bounds()),
        values=ValueGenerator("tiered"),
    )


def test_single_agent_market():
    market = sample_market(MarketConfig.strict(1), seed=0)
    matching, ledger, trace = adaptive_match(market)
    assert matching.pairs() == [(0, 0)]
    assert len(ledger) == 1
    assert [ev.kind for ev in trace] == [EVENT_INTERVIEW, EVENT_MATCH]


def test_two_agents_all_noise_nonnegative_hand_trace():
    market = crafted_market(
        eps_a=[[0.5, 0.1], [0.2, 0.3]],
        eps_p=[[0.4, 0.2], [0.1, 0.6]],
        u=[1.0, 0.0],
        v=[1.0, 0.0],
    )
    matching, ledger, trace = adaptive_match(market)
    assert matching.pairs() == [(0, 0), (1, 1)]
    assert len(ledger) == 2
    expected = [
        (EVENT_INTERVIEW, 0, 0),
        (EVENT_MATCH, 0, 0),
        (EVENT_REJECT, 1, 0),
        (EVENT_INTERVIEW, 1, 1),
        (EVENT_MATCH, 1, 1),
    ]
    assert [(ev.kind, ev.applicant, ev.position) for ev in trace] == expected


class TestNextProposalTarget:
    def test_public_value_argmax(self):
        market = sample_market(MarketConfig.strict(3), seed=0)
        state = AdaptiveState.fresh(3)
        assert next_proposal_target(state, market, 0) == 0

    def test_bad_interview_moves_on(self):
        market = crafted_market(
            eps_a=[[-5.0, 0.0], [0.0, 0.0]],
            eps_p=[[0.0, 0.0], [0.0, 0.0]],
            u=[1.0, 0.0],
            v=[1.0, 0.0],
        )
        state = AdaptiveState.fresh(2)
        state.ledger.record(0, 0)
        assert next_proposal_target(state, market, 0) == 1

    def test_rejection_moves_on(self):
        market = sample_market(MarketConfig.strict(3), seed=0)
        state = AdaptiveState.fresh(3)
        state.rejected[0].add(0)
        assert next_proposal_target(state, market, 0) == 1

    def test_exhaustion(self):
        market = sample_market(MarketConfig.strict(2), seed=0)
        state = AdaptiveState.fresh(2)
        state.rejected[0].update({0, 1})
        with pytest.raises(ProposalExhaustedError):
            next_proposal_target(state, market, 0)

    def test_matched_applicant_rejected(self):
        market = sample_market(MarketConfig.strict(2), seed=0)
        state = AdaptiveState.fresh(2)
        state.matching.match(0, 0)
        with pytest.raises(ValueError):
            next_proposal_target(state, market, 0)


def test_requires_square_market():
    config = MarketConfig.tiered((0, 2), (0, 3))
    with pytest.raises(ConfigError):
        adaptive_match(sample_market(config, seed=0))


def _apply_event(state, ev):
    if ev.kind == EVENT_INTERVIEW:
        state.ledger.record(ev.applicant, ev.position)
    elif ev.kind == EVENT_REJECT:
        state.rejected[ev.applicant].add(ev.position)
    elif ev.kind == EVENT_DISPLACE:
        state.matching.unmatch(ev.applicant, ev.position)
        state.rejected[ev.applicant].add(ev.position)
    elif ev.kind == EVENT_MATCH:
        state.matching.match(ev.applicant, ev.position)


def test_every_proposal_goes_to_beta():
    # each Interview/Reject/Match event must target exactly the applicant's
    # current best not-yet-rejecting position
    for seed in range(6):
        for config in (
            MarketConfig.strict(7, spacing=0.3),
            mixed_tiered_config(8, seed + 50),
        ):
            market = sample_market(config, seed=seed)
            matching, ledger, trace = adaptive_match(market)
            state = AdaptiveState.fresh(market.n)
            for ev in trace:
                if ev.kind in (EVENT_INTERVIEW, EVENT_REJECT, EVENT_MATCH):
                    assert next_proposal_target(state, market, ev.applicant) == ev.position
                _apply_event(state, ev)
            assert state.matching.pairs() == matching.pairs()
            assert state.ledger.order == ledger.order


def test_replay_events_reconstructs_run():
    market = sample_market(mixed_tiered_config(9, 4), seed=21)
    matching, ledger, trace = adaptive_match(market)
    state = replay_events(market, trace)
    assert state.matching.pairs() == matching.pairs()
    assert state.ledger.order == ledger.order
    # prefix replay gives a consistent partial state
    half = replay_events(market, trace, upto=len(trace) // 2)
    half.matching.check_consistent()


def test_position_partners_strictly_improve():
    for seed in range(8):
        market = sample_market(mixed_tiered_config(10, seed), seed=seed)
        _, ledger, trace = adaptive_match(market)
        last_key: dict[int, tuple[float, int]] = {}
        for ev in trace:
            if ev.kind != EVENT_MATCH:
                continue
            a, p = ev.applicant, ev.position
            assert (a, p) in ledger
            key = (
                float(market.applicant_values[a]) + market.eps_position(p, a),
                -a,
            )
            if p in last_key:
                assert key > last_key[p]
            last_key[p] = key


def test_stability_sweep_small_markets():
    # spec invariant: all sizes up to 64, at least 200 seeds in total
    runs = 0
    for n in (2, 4, 8, 16, 32, 64):
        for seed in range(40):
            if seed % 3 == 0:
                config = MarketConfig.strict(n)
            elif seed % 3 == 1:
                config = MarketConfig.tiered((0, n), (0, n))
            else:
                config = mixed_tiered_config(n, seed)
            market = sample_market(config, seed=seed)
            matching, ledger, trace = adaptive_match(market)
            assert len(matching) == n
            assert all(pair in ledger for pair in matching.pairs())
            verdict = verify(market, ledger, matching)
            assert verdict.is_interim_stable, (n, seed, verdict.to_dict())
            runs += 1
    assert runs >= 200


def test_optimized_matches_reference():
    cases = []
    for seed in range(8):
        cases.append((MarketConfig.strict(11, spacing=0.25), seed))
        cases.append((MarketConfig.strict(6), seed))
        cases.append((MarketConfig.tiered((0, 13), (0, 13)), seed))
        cases.append((mixed_tiered_config(12, seed + 7), seed))
    for config, seed in cases:
        market = sample_market(config, seed=seed)
        mu1, l1, t1 = adaptive_match(market)
        mu2, l2, t2 = adaptive_match_reference(market)
        assert mu1.pairs() == mu2.pairs()
        assert l1.order == l2.order
        assert t1 == t2


def test_full_information_fixed_point():
    # crafted so every pair interviews; the outcome must then equal
    # applicant-proposing DA on the true utilities
    market = crafted_market(
        eps_a=[[-0.15, -0.12], [-0.2, 0.05]],
        eps_p=[[0.1, 0.0], [0.0, 0.1]],
        u=[0.1, 0.0],
        v=[0.1, 0.0],
    )
    matching, ledger, trace = adaptive_match(market)
    assert len(ledger) == 4
    expected, _ = da_on_true_utilities(market)
    assert matching.pairs() == expected.pairs()


def test_eta_market_supported():
    config = MarketConfig.tiered(
        (0, 3, 6), (0, 6), utility=UtilityModel(eta_enabled=True, tier_gap=10.0)
    )
    market = sample_market(config, seed=2)
    matching, ledger, trace = adaptive_match(market)
    assert len(matching) == 6
    verdict = verify(market, ledger, matching)
    assert verdict.is_interim_stable
    mu_ref, l_ref, t_ref = adaptive_match_reference(market)
    assert matching.pairs() == mu_ref.pairs()


class TestMonitors:
    def test_clean_runs_have_no_hard_violations(self):
        for seed in range(10):
            market = sample_market(MarketConfig.tiered((0, 40), (0, 40)), seed=seed)
            _, _, trace = adaptive_match(market)
            report = check_trace_monitors(trace, market)
            assert report.claim22_violations == []
            assert report.obs23_violations == []
            assert report.interview_count == len(
                [1 for ev in trace if ev.kind == EVENT_INTERVIEW]
            )

    def test_corrupted_claim22_flagged(self):
        market = crafted_market(
            eps_a=[[0.5, 0.1], [0.2, 0.3]],
            eps_p=[[0.4, 0.2], [0.1, 0.6]],
            u=[1.0, 0.0],
            v=[1.0, 0.0],
        )
        bad = TraceLog()
        bad.append(EVENT_INTERVIEW, 0, 0, 1)
        bad.append(EVENT_REJECT, 0, 0, 2)
        report = check_trace_monitors(bad, market)
        assert report.claim22_violations == [(0, 0)]

    def test_interview_of_matched_position_not_claim22(self):
        market = crafted_market(
            eps_a=[[0.5, 0.1], [0.2, 0.3]],
            eps_p=[[0.4, 0.2], [0.1, 0.6]],
            u=[1.0, 0.0],
            v=[1.0, 0.0],
        )
        ok = TraceLog()
        ok.append(EVENT_INTERVIEW, 0, 0, 1)
        ok.append(EVENT_MATCH, 0, 0, 2)
        ok.append(EVENT_INTERVIEW, 1, 0, 3)  # position matched: no expectation
        ok.append(EVENT_REJECT, 1, 0, 4)
        report = check_trace_monitors(ok, market)
        assert report.claim22_violations == []

    def test_obs23_gap_flagged(self):
        n = 6
        market = sample_market(MarketConfig.strict(n), seed=0)
        bad = TraceLog()
        bad.append(EVENT_INTERVIEW, 0, 3, 1)  # no interviews at 0, 1, 2 first
        report = check_trace_monitors(bad, market)
        assert report.obs23_violations == [(0, 3)]

    def test_obs23_satisfied_sequence(self):
        n = 6
        market = sample_market(MarketConfig.strict(n), seed=0)
        good = TraceLog()
        for j in range(4):
            good.append(EVENT_INTERVIEW, 0, j, j + 1)
        report = check_trace_monitors(good, market)
        assert report.obs23_violations == []

    def test_window_counters(self):
        n = 30
        market = sample_market(MarketConfig.strict(n), seed=0)
        t = TraceLog()
        t.append(EVENT_INTERVIEW, 29, 0, 1)  # 29 > 0 + 8 ln 30 = 27.2
        report = check_trace_monitors(t, market)
        assert report.upward_window == pytest.approx(8 * math.log(30))
        assert report.upward_window_violations == 1
        # with a huge log base the downward window shrinks below n
        report_b = check_trace_monitors(t, market, log_base=1e30)
        assert report_b.downward_window < n
        t2 = TraceLog()
        t2.append(EVENT_INTERVIEW, 0, 29, 1)
        assert check_trace_monitors(t2, market, log_base=1e30).downward_window_violations == 1

    def test_eta_market_rejected(self):
        config = MarketConfig.tiered(
            (0, 2), (0, 2), utility=UtilityModel(eta_enabled=True, tier_gap=10.0)
        )
        market = sample_market(config, seed=0)
        with pytest.raises(ValueError):
            check_trace_monitors(TraceLog(), market)


def test_trace_jsonl_records():
    market = sample_market(MarketConfig.strict(3), seed=1)
    _, _, trace = adaptive_match(market)
    records = list(trace.iter_jsonl_records(market))
    assert len(records) == len(trace)
    first = records[0]
    assert first["kind"] == "interview"
    a, p = first["i"], first["j"]
    assert first["v_obs"] == float(market.position_values[p]) + market.eps_applicant(a, p)
    assert all(
        set(r) == {"kind", "i", "j", "iteration", "v_obs", "u_obs"} for r in records
    )
