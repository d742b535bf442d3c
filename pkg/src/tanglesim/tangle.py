"""The message DAG: attachment, tip selection, approval weight, confirmation.

Approval weight is kept incrementally. Each message carries the bitmask of
issuers found in its future cone; attaching a message from issuer ``i``
walks up through its past cone setting bit ``i`` and stops wherever the bit
is already set, because an ancestor's issuer set always contains that of
its descendants. Each (message, issuer) pair is therefore visited once.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

from .crypto import content_hash
from .errors import NoEligibleTips, UnknownMessage, UnknownParent
from .message import MAX_PARENTS, MIN_PARENTS, Message, ValueTxPayload
from .rng import Xoshiro256
from .utxo import (
    MASTER,
    ApplyOutcome,
    BranchStatus,
    Conflict,
    Invalid,
    ResolutionReport,
    TxState,
    UtxoLedger,
)

GENESIS_ANCHORS = (content_hash(b"genesis-anchor-0"), content_hash(b"genesis-anchor-1"))


class PayloadOpinion(enum.Enum):
    LIKE = "like"
    DISLIKE = "dislike"
    NA = "na"


@dataclass
class MessageMetadata:
    attach_time: float
    issuer: bytes | None
    branch: bytes = MASTER
    payload_opinion: PayloadOpinion = PayloadOpinion.NA
    confirmation_time: float | None = None
    orphaned: bool = False
    invalid: bool = False
    payload_rejected: bool = False
    tx_id: bytes | None = None

    @property
    def confirmed(self) -> bool:
        return self.confirmation_time is not None


@dataclass(frozen=True)
class ConflictResolution:
    report: ResolutionReport
    winner_message: bytes
    rejected_messages: frozenset[bytes]
    remerged_messages: frozenset[bytes]


@dataclass
class SweepResult:
    confirmed: set[bytes] = field(default_factory=set)
    orphaned: set[bytes] = field(default_factory=set)
    resolutions: list[ConflictResolution] = field(default_factory=list)


@dataclass
class TipOpCounter:
    tips_examined: int = 0
    selections: int = 0


def parent_count(congestion_level: float) -> int:
    return max(MIN_PARENTS, min(MAX_PARENTS, 2 + math.floor(6 * congestion_level)))


class Tangle:
    """One shared ledger view; single-threaded mutation."""

    def __init__(
        self,
        eligibility_age: float = 30.0,
        confirmation_threshold: float = 0.5,
        tip_pool_target: int = 100,
        ledger: UtxoLedger | None = None,
        orphan_age: float | None = None,
    ):
        if not 0 < confirmation_threshold <= 1:
            raise ValueError("confirmation threshold must lie in (0, 1]")
        if eligibility_age <= 0 or tip_pool_target <= 0:
            raise ValueError("eligibility age and tip pool target must be positive")
        self.eligibility_age = eligibility_age
        self.confirmation_threshold = confirmation_threshold
        self.tip_pool_target = tip_pool_target
        self.orphan_age = 10 * eligibility_age if orphan_age is None else orphan_age
        self.ledger = ledger

        self.messages: dict[bytes, Message | None] = {}
        self.metadata: dict[bytes, MessageMetadata] = {}
        self.approvers: dict[bytes, set[bytes]] = {}
        self.tips: set[bytes] = set()
        self._tip_pool: dict[bytes, None] = {}
        self._cone: dict[bytes, int] = {}
        self._issuer_bit: dict[bytes, int] = {}
        self._issuers: list[bytes] = []
        self._unconfirmed: dict[bytes, None] = {}
        self._by_branch: dict[bytes, set[bytes]] = defaultdict(set)
        self._tx_message: dict[bytes, bytes] = {}
        self._conflicts: list[set[bytes]] = []
        self._opinions: dict[bytes, dict[bytes, bool]] = defaultdict(dict)
        self._shared_dislikes: set[bytes] = set()
        self.tip_ops = TipOpCounter()
        self.last_outcome: ApplyOutcome | None = None

        for gid in GENESIS_ANCHORS:
            self.messages[gid] = None
            self.metadata[gid] = MessageMetadata(attach_time=0.0, issuer=None, confirmation_time=0.0)
            self.approvers[gid] = set()
            self._cone[gid] = 0
            self.tips.add(gid)
            self._tip_pool[gid] = None

    # ----------------------------------------------------------------- helpers

    def __contains__(self, message_id: bytes) -> bool:
        return message_id in self.metadata

    def __len__(self) -> int:
        return len(self.metadata)

    def is_genesis(self, message_id: bytes) -> bool:
        return message_id in GENESIS_ANCHORS

    def issuer_bit(self, issuer: bytes) -> int:
        bit = self._issuer_bit.get(issuer)
        if bit is None:
            bit = self._issuer_bit[issuer] = len(self._issuers)
            self._issuers.append(issuer)
        return bit

    def cone_issuers(self, message_id: bytes) -> set[bytes]:
        mask = self._cone[message_id]
        return {iss for iss, bit in self._issuer_bit.items() if mask >> bit & 1}

    def _branch_status(self, branch: bytes) -> BranchStatus:
        if self.ledger is None or branch == MASTER:
            return BranchStatus.CONFIRMED
        return self.ledger.status(branch)

    def _index_branch(self, message_id: bytes, branch: bytes) -> None:
        if self.ledger is not None and branch != MASTER:
            for b in self.ledger.reality_of(branch):
                self._by_branch[b].add(message_id)

    # ------------------------------------------------------------------ attach

    def attach(self, message: Message, now: float) -> bytes:
        mid = message.id
        if mid in self.metadata:
            raise ValueError(f"message {mid.hex()} already attached")
        missing = [p for p in message.parents if p not in self.metadata]
        if missing:
            raise UnknownParent(", ".join(p.hex() for p in missing))

        meta = MessageMetadata(attach_time=now, issuer=message.issuer_id)
        self.last_outcome = None
        if self.ledger is not None:
            inherited = self.ledger.merge_branches(self.metadata[p].branch for p in message.parents)
            if inherited is None:
                meta.invalid = True
            elif isinstance(message.payload, ValueTxPayload):
                tx = message.payload.transaction
                outcome = self.ledger.apply_transaction(tx, now, attribution=inherited)
                self.last_outcome = outcome
                if isinstance(outcome, Invalid):
                    meta.invalid = True
                    meta.branch = inherited
                else:
                    meta.tx_id = tx.id
                    self._tx_message[meta.tx_id] = mid
                    meta.branch = self.ledger.branch_of_tx(meta.tx_id)
                    meta.payload_opinion = PayloadOpinion.LIKE
            else:
                meta.branch = inherited

        self.messages[mid] = message
        self.metadata[mid] = meta
        self.approvers[mid] = set()
        self._cone[mid] = 0
        self._index_branch(mid, meta.branch)
        for p in message.parents:
            self.approvers[p].add(mid)
            pmeta = self.metadata[p]
            if pmeta.orphaned:
                # referenced after all, e.g. selected just before it went stale
                pmeta.orphaned = False
                self._unconfirmed[p] = None
            if p in self.tips:
                self.tips.discard(p)
                self._tip_pool.pop(p, None)
        self.tips.add(mid)
        if not meta.invalid:
            self._tip_pool[mid] = None
            self._unconfirmed[mid] = None
        self._propagate_issuer(message)
        if isinstance(self.last_outcome, Conflict):
            self._register_conflict(self.last_outcome)
        return mid

    def _register_conflict(self, outcome: Conflict) -> None:
        members = set(outcome.conflict_set)
        for tx_id in members:
            mid = self._tx_message.get(tx_id)
            if mid is None:
                continue
            meta = self.metadata[mid]
            new_branch = self.ledger.branch_of_tx(tx_id)
            if new_branch != meta.branch:
                meta.branch = new_branch
                self._index_branch(mid, new_branch)
            if tx_id != outcome.branch_id:
                continue
            # a late-arriving double spend is disliked in the shared view
            meta.payload_opinion = PayloadOpinion.DISLIKE
            self._shared_dislikes.add(tx_id)
        merged = [c for c in self._conflicts if c & members]
        for c in merged:
            self._conflicts.remove(c)
            members |= c
        self._conflicts.append(members)

    def _propagate_issuer(self, message: Message) -> None:
        bit = 1 << self.issuer_bit(message.issuer_id)
        stack = list(message.parents)
        cone = self._cone
        while stack:
            p = stack.pop()
            if cone[p] & bit:
                continue
            cone[p] |= bit
            m = self.messages[p]
            if m is not None:
                stack.extend(m.parents)

    # ----------------------------------------------------------------- opinions

    def set_opinion(self, node: bytes, tx_id: bytes, like: bool) -> None:
        """Record ``node``'s own opinion on a conflict member."""
        self._opinions[node][tx_id] = like

    def opinion(self, node: bytes | None, tx_id: bytes) -> bool:
        if node is not None and tx_id in self._opinions.get(node, {}):
            return self._opinions[node][tx_id]
        return tx_id not in self._shared_dislikes

    def _eligible(self, message_id: bytes, now: float, node: bytes | None) -> bool:
        meta = self.metadata[message_id]
        if now - meta.attach_time > self.eligibility_age:
            return False
        if meta.invalid or meta.payload_rejected or meta.orphaned:
            return False
        if meta.branch == MASTER:
            return True
        if self._branch_status(meta.branch) is BranchStatus.REJECTED:
            return False
        return all(self.opinion(node, b) for b in self.ledger.reality_of(meta.branch))

    def eligible_tips(self, now: float, node: bytes | None = None) -> list[bytes]:
        """Eligible tips in attachment order; stale tips leave the pool for good."""
        out = []
        stale = []
        for tip in self._tip_pool:
            self.tip_ops.tips_examined += 1
            if now - self.metadata[tip].attach_time > self.eligibility_age:
                stale.append(tip)
            elif self._eligible(tip, now, node):
                out.append(tip)
        for tip in stale:
            del self._tip_pool[tip]
        return out

    def congestion_level(self, eligible_count: int) -> float:
        return min(1.0, eligible_count / self.tip_pool_target)

    def select_tips(
        self,
        now: float,
        rng: Xoshiro256,
        congestion_level: float | None = None,
        node: bytes | None = None,
    ) -> list[bytes]:
        """Uniformly pick distinct eligible tips as parents for a new message."""
        self.tip_ops.selections += 1
        eligible = self.eligible_tips(now, node)
        if not eligible:
            raise NoEligibleTips(f"no eligible tips at t={now}")
        if congestion_level is None:
            congestion_level = self.congestion_level(len(eligible))
        want = parent_count(congestion_level)
        chosen = rng.sample(eligible, min(want, len(eligible)))
        if self.ledger is not None:
            chosen = self._compatible(chosen)
        if len(chosen) < MIN_PARENTS:
            chosen.append(self._pad(chosen[0], rng))
        return chosen

    def _compatible(self, chosen: list[bytes]) -> list[bytes]:
        """Drop tips whose branch cannot merge with the ones kept so far."""
        kept = [chosen[0]]
        branches = [self.metadata[chosen[0]].branch]
        for tip in chosen[1:]:
            b = self.metadata[tip].branch
            if self.ledger.merge_branches([*branches, b]) is not None:
                kept.append(tip)
                branches.append(b)
        return kept

    def _pad(self, tip: bytes, rng: Xoshiro256) -> bytes:
        # a lone tip is paired with one of its own parents, never with itself
        message = self.messages[tip]
        if message is None:
            return next(g for g in GENESIS_ANCHORS if g != tip)
        return rng.choice(list(message.parents))

    # --------------------------------------------------------- approval weight

    def approval_weight(self, message_id: bytes, mana_view: Mapping[bytes, float]) -> float:
        if message_id not in self.metadata:
            raise UnknownMessage(message_id.hex())
        total = sum(mana_view.values())
        if total <= 0:
            return 0.0
        mask = self._cone[message_id]
        weight = 0.0
        for issuer, bit in self._issuer_bit.items():
            if mask >> bit & 1:
                weight += mana_view.get(issuer, 0.0)
        return weight / total

    def _weigher(self, mana_view: Mapping[bytes, float]):
        total = sum(mana_view.values())
        per_bit = [mana_view.get(iss, 0.0) for iss in self._issuers]
        cache: dict[int, float] = {}

        def weigh(mask: int) -> float:
            w = cache.get(mask)
            if w is None:
                w = 0.0
                for bit, m in enumerate(per_bit):
                    if mask >> bit & 1:
                        w += m
                w = cache[mask] = w / total if total > 0 else 0.0
            return w

        return weigh

    # ------------------------------------------------------------ confirmation

    def confirmation_sweep(self, now: float, mana_view: Mapping[bytes, float]) -> SweepResult:
        result = SweepResult()
        weigh = self._weigher(mana_view)
        theta = self.confirmation_threshold

        if self.ledger is not None:
            for members in list(self._conflicts):
                pending = [
                    t for t in sorted(members)
                    if t in self._tx_message and self.ledger.status(t) is BranchStatus.PENDING
                ]
                if not pending:
                    self._conflicts.remove(members)
                    continue
                scored = [(weigh(self._cone[self._tx_message[t]]), t) for t in pending]
                best_weight, best = max(scored, key=lambda s: (s[0], s[1]))
                if best_weight >= theta:
                    result.resolutions.append(self._resolve(best))
                    self._conflicts.remove(members)

        for mid in list(self._unconfirmed):
            meta = self.metadata[mid]
            if meta.payload_rejected or meta.invalid:
                del self._unconfirmed[mid]
                continue
            status = self._branch_status(meta.branch)
            if status is BranchStatus.REJECTED:
                continue
            if status is BranchStatus.PENDING or weigh(self._cone[mid]) < theta:
                if mid in self.tips and now - meta.attach_time > self.orphan_age:
                    meta.orphaned = True
                    result.orphaned.add(mid)
                    del self._unconfirmed[mid]
                continue
            meta.confirmation_time = now
            result.confirmed.add(mid)
            del self._unconfirmed[mid]
            if meta.tx_id is not None:
                self.ledger.confirm_transaction(meta.tx_id)
        return result

    def _resolve(self, winner_tx: bytes) -> ConflictResolution:
        report = self.ledger.resolve_branches(winner_tx)
        rejected_msgs = set()
        remerged_msgs = set()
        touched = set()
        for b in report.rejected_branches | report.confirmed_branches:
            touched |= self._by_branch.pop(b, set())
        for mid in sorted(touched):
            meta = self.metadata[mid]
            if meta.tx_id is not None and self.ledger.tx_state(meta.tx_id) is TxState.REJECTED:
                meta.payload_rejected = True
                meta.payload_opinion = PayloadOpinion.DISLIKE
                rejected_msgs.add(mid)
                self._unconfirmed.pop(mid, None)
                continue
            was_rejected = self._branch_status(meta.branch) is BranchStatus.REJECTED
            meta.branch = self.ledger.prune(meta.branch)
            self._index_branch(mid, meta.branch)
            if was_rejected:
                remerged_msgs.add(mid)
        return ConflictResolution(
            report=report,
            winner_message=self._tx_message[winner_tx],
            rejected_messages=frozenset(rejected_msgs),
            remerged_messages=frozenset(remerged_msgs),
        )

    # ------------------------------------------------------------------ queries

    def future_cone(self, message_id: bytes) -> set[bytes]:
        """Brute-force traversal over approvers; used for cross-checks."""
        seen: set[bytes] = set()
        stack = list(self.approvers[message_id])
        while stack:
            m = stack.pop()
            if m in seen:
                continue
            seen.add(m)
            stack.extend(self.approvers[m])
        return seen

    def confirmed_messages(self) -> list[bytes]:
        return [m for m, meta in self.metadata.items() if meta.confirmed and m not in GENESIS_ANCHORS]

    def orphaned_messages(self) -> list[bytes]:
        return [m for m, meta in self.metadata.items() if meta.orphaned]
