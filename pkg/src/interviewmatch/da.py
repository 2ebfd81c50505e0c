"""Instrumented deferred acceptance over explicit, possibly partial preference lists."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .market import Matching


@dataclass
class PreferenceTable:
    """Proposer-side ordered lists plus a receiver-side utility callback.

    Anyone absent from a proposer's list is mutually unacceptable. Receivers
    rank proposers by (utility, lower index wins ties), a strict total order.
    """

    proposer_prefs: Sequence[Sequence[int]]
    receiver_utility: Callable[[int, int], float]
    n_receivers: int

    def validate(self) -> None:
        for i, prefs in enumerate(self.proposer_prefs):
            if len(set(prefs)) != len(prefs):
                raise ValueError(f"duplicate entries in proposer {i}'s list")
            for r in prefs:
                if not 0 <= r < self.n_receivers:
                    raise ValueError(f"proposer {i} lists invalid receiver {r}")


@dataclass
class DAOutcome:
    """Result of one deferred-acceptance run (proposers sit in the applicant slot)."""

    matching: Matching
    proposal_count_total: int
    proposals_per_receiver: dict[int, int]
    proposal_log: Optional[list[tuple[int, int, bool]]]
    prefs: PreferenceTable


def deferred_acceptance(
    prefs: PreferenceTable,
    scheduler: str = "fifo",
    keep_log: bool = True,
) -> DAOutcome:
    """Proposer-optimal stable matching w.r.t. the listed pairs.

    The final matching does not depend on the proposal scheduling; ``scheduler``
    exists so tests can enforce that ("fifo" queue vs "lifo" stack).
    """
    prefs.validate()
    if scheduler not in ("fifo", "lifo"):
        raise ValueError(f"unknown scheduler {scheduler!r}")

    lists = prefs.proposer_prefs
    util = prefs.receiver_utility
    n_proposers = len(lists)

    next_idx = [0] * n_proposers
    held: dict[int, int] = {}
    held_key: dict[int, tuple[float, int]] = {}
    pending = deque(i for i in range(n_proposers) if lists[i])

    log: Optional[list[tuple[int, int, bool]]] = [] if keep_log else None
    per_receiver: dict[int, int] = {}
    total = 0

    while pending:
        i = pending.popleft() if scheduler == "fifo" else pending.pop()
        my_list = lists[i]
        while next_idx[i] < len(my_list):
            r = my_list[next_idx[i]]
            total += 1
            per_receiver[r] = per_receiver.get(r, 0) + 1
            key = (util(r, i), -i)
            incumbent = held.get(r)
            if incumbent is None:
                held[r] = i
                held_key[r] = key
                if log is not None:
                    log.append((i, r, True))
                break
            if key > held_key[r]:
                held[r] = i
                held_key[r] = key
                if log is not None:
                    log.append((i, r, True))
                next_idx[incumbent] += 1
                if next_idx[incumbent] < len(lists[incumbent]):
                    pending.append(incumbent)
                break
            if log is not None:
                log.append((i, r, False))
            next_idx[i] += 1

    matching = Matching()
    for r, i in sorted(held.items()):
        matching.match(i, r)
    return DAOutcome(
        matching=matching,
        proposal_count_total=total,
        proposals_per_receiver=per_receiver,
        proposal_log=log,
        prefs=prefs,
    )


def rank_of_match(outcome: DAOutcome, proposer: int) -> Optional[int]:
    """1-based rank of the matched partner in the proposer's list; None if unmatched."""
    r = outcome.matching.position_of(proposer)
    if r is None:
        return None
    return list(outcome.prefs.proposer_prefs[proposer]).index(r) + 1
