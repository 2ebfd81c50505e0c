"""Exact interim-stability verification and a brute-force oracle for tiny instances."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .market import InterviewLedger, Market, Matching

ORACLE_SIZE_LIMIT = 7


@dataclass
class BlockingPair:
    """A mutually-preferred pair, with the observed utilities that prove it."""

    applicant: int
    position: int
    applicant_utility: float
    applicant_current: float
    position_utility: float
    position_current: float

    def to_dict(self) -> dict:
        return {
            "applicant": self.applicant,
            "position": self.position,
            "applicant_utility": self.applicant_utility,
            "applicant_current": self.applicant_current,
            "position_utility": self.position_utility,
            "position_current": self.position_current,
        }


@dataclass
class StabilityVerdict:
    is_interim_stable: bool
    blocking_pairs: list[BlockingPair] = field(default_factory=list)
    uninterviewed_matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_applicants: list[int] = field(default_factory=list)
    unmatched_positions: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "is_interim_stable": self.is_interim_stable,
            "blocking_pairs": [b.to_dict() for b in self.blocking_pairs],
            "uninterviewed_matches": [list(p) for p in self.uninterviewed_matches],
            "unmatched_applicants": self.unmatched_applicants,
            "unmatched_positions": self.unmatched_positions,
        }


def observed_matrices(market: Market, ledger: InterviewLedger) -> tuple[np.ndarray, np.ndarray]:
    """Dense observed-utility matrices (applicant-side n x m, position-side m x n)."""
    n, m = market.n, market.m
    mask = np.zeros((n, m), dtype=bool)
    for a, p in ledger.order:
        mask[a, p] = True
    v_obs = np.broadcast_to(market.position_values[None, :], (n, m)).copy()
    u_obs = np.broadcast_to(market.applicant_values[None, :], (m, n)).copy()
    if market.eta_enabled:
        v_obs += market.eta_a
        u_obs += market.eta_p
    v_obs[mask] += market.eps_a[mask]
    u_obs[mask.T] += market.eps_p[mask.T]
    return v_obs, u_obs


def _blocking_mask(
    v_obs: np.ndarray, u_obs: np.ndarray, matching: Matching
) -> np.ndarray:
    """Boolean n x m mask of pairs that strictly prefer each other (unmatched = worst)."""
    n, m = v_obs.shape
    a_current = np.full(n, -np.inf)
    p_current = np.full(m, -np.inf)
    for a, p in matching.applicant_to_position.items():
        a_current[a] = v_obs[a, p]
        p_current[p] = u_obs[p, a]
    return (v_obs > a_current[:, None]) & (u_obs.T > p_current[None, :])


def verify(market: Market, ledger: InterviewLedger, matching: Matching) -> StabilityVerdict:
    """Scan all n*m pairs for blocking pairs and matched-but-uninterviewed pairs."""
    matching.check_consistent()
    n, m = market.n, market.m
    for a, p in matching.applicant_to_position.items():
        if not (0 <= a < n and 0 <= p < m):
            raise ValueError(f"matched pair ({a}, {p}) out of range")

    v_obs, u_obs = observed_matrices(market, ledger)
    block = _blocking_mask(v_obs, u_obs, matching)

    blocking_pairs = []
    for a, p in np.argwhere(block):
        a, p = int(a), int(p)
        mu_a = matching.position_of(a)
        mu_p = matching.applicant_of(p)
        blocking_pairs.append(
            BlockingPair(
                applicant=a,
                position=p,
                applicant_utility=float(v_obs[a, p]),
                applicant_current=float(v_obs[a, mu_a]) if mu_a is not None else float("-inf"),
                position_utility=float(u_obs[p, a]),
                position_current=float(u_obs[p, mu_p]) if mu_p is not None else float("-inf"),
            )
        )

    uninterviewed = [pair for pair in matching.pairs() if pair not in ledger]
    unmatched_a = [a for a in range(n) if matching.position_of(a) is None]
    unmatched_p = [p for p in range(m) if matching.applicant_of(p) is None]
    return StabilityVerdict(
        is_interim_stable=not blocking_pairs and not uninterviewed,
        blocking_pairs=blocking_pairs,
        uninterviewed_matches=uninterviewed,
        unmatched_applicants=unmatched_a,
        unmatched_positions=unmatched_p,
    )


def matching_key(matching: Matching) -> tuple[tuple[int, int], ...]:
    """Canonical hashable form of a matching, for oracle membership tests."""
    return tuple(matching.pairs())


def enumerate_interim_stable(market: Market, ledger: InterviewLedger) -> list[Matching]:
    """All interim stable matchings, by exhaustive enumeration. Tiny instances only."""
    n, m = market.n, market.m
    if max(n, m) > ORACLE_SIZE_LIMIT:
        raise ValueError(f"oracle limited to sides of at most {ORACLE_SIZE_LIMIT}, got {n}x{m}")

    v_obs, u_obs = observed_matrices(market, ledger)
    interviewed = ledger.pairs()
    k = min(n, m)
    stable: list[Matching] = []

    # with both sides preferring any partner to none, a stable matching must
    # saturate the short side, so enumerating those is exhaustive
    for applicants in itertools.combinations(range(n), k):
        for positions in itertools.permutations(range(m), k):
            pairs = list(zip(applicants, positions))
            if any(pair not in interviewed for pair in pairs):
                continue
            mu = Matching()
            for a, p in pairs:
                mu.match(a, p)
            if not _blocking_mask(v_obs, u_obs, mu).any():
                stable.append(mu)
    stable.sort(key=matching_key)
    return stable
