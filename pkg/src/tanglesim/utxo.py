"""UTXO ledger with a reality-based branch model for double spends.

Every transaction that spends an output also spent by another transaction
becomes a *conflict member* and gets its own branch whose id equals its
transaction id. A *reality* is the set of pending conflict branches a
transaction depends on; the empty reality is the master branch. Realities
are derived from the outputs a transaction spends (the ledger reality) plus
an optional attribution inherited from message ancestry in the tangle.

Lookups only touch the output and consumer indexes; nothing here walks the
message DAG.
"""

from __future__ import annotations

import enum
import struct
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .crypto import DIGEST_SIZE, content_hash
from .errors import MalformedEncoding, UnknownBranch, WinnerNotPending

MASTER = bytes(DIGEST_SIZE)
GENESIS_TX_ID = content_hash(b"genesis")
MAX_AMOUNT = 2**64 - 1


@dataclass(frozen=True, order=True)
class OutputRef:
    tx_id: bytes
    index: int

    def __str__(self) -> str:
        return f"{self.tx_id.hex()}:{self.index}"


@dataclass(frozen=True)
class Output:
    address: bytes
    amount: int


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[OutputRef, ...]
    outputs: tuple[Output, ...]
    access_pledge: bytes
    consensus_pledge: bytes

    @property
    def id(self) -> bytes:
        return content_hash(encode_transaction(self))

    @property
    def amount(self) -> int:
        """Tokens moved by this transaction."""
        return sum(o.amount for o in self.outputs)


def encode_transaction(tx: Transaction) -> bytes:
    parts = [struct.pack("<H", len(tx.inputs))]
    for ref in tx.inputs:
        parts.append(ref.tx_id + struct.pack("<H", ref.index))
    parts.append(struct.pack("<H", len(tx.outputs)))
    for out in tx.outputs:
        parts.append(out.address + struct.pack("<Q", out.amount))
    parts.append(tx.access_pledge)
    parts.append(tx.consensus_pledge)
    return b"".join(parts)


def decode_transaction(data: bytes) -> Transaction:
    try:
        off = 0
        (n_in,) = struct.unpack_from("<H", data, off)
        off += 2
        inputs = []
        for _ in range(n_in):
            tx_id = data[off: off + 32]
            (index,) = struct.unpack_from("<H", data, off + 32)
            if len(tx_id) != 32:
                raise MalformedEncoding("truncated input")
            inputs.append(OutputRef(tx_id, index))
            off += 34
        (n_out,) = struct.unpack_from("<H", data, off)
        off += 2
        outputs = []
        for _ in range(n_out):
            address = data[off: off + 32]
            (amount,) = struct.unpack_from("<Q", data, off + 32)
            if len(address) != 32:
                raise MalformedEncoding("truncated output")
            outputs.append(Output(address, amount))
            off += 40
    except struct.error as exc:
        raise MalformedEncoding("truncated transaction") from exc
    access, consensus = data[off: off + 32], data[off + 32: off + 64]
    if len(consensus) != 32 or off + 64 != len(data):
        raise MalformedEncoding("transaction length mismatch")
    return Transaction(tuple(inputs), tuple(outputs), access, consensus)


class BranchStatus(enum.Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"


@dataclass
class Branch:
    branch_id: bytes
    parent_branch: bytes
    conflict_members: set[bytes]
    status: BranchStatus = BranchStatus.PENDING


class InvalidReason(enum.Enum):
    MALFORMED = "Malformed"
    DUPLICATE = "Duplicate"
    NONEXISTENT_INPUT = "NonexistentInput"
    BALANCE_MISMATCH = "BalanceMismatch"
    UNMERGEABLE_REALITIES = "UnmergeableRealities"
    ALREADY_SPENT = "AlreadySpent"


@dataclass(frozen=True)
class Valid:
    branch_id: bytes


@dataclass(frozen=True)
class Conflict:
    branch_id: bytes
    conflict_set: frozenset[bytes]


@dataclass(frozen=True)
class Invalid:
    reason: InvalidReason


ApplyOutcome = Valid | Conflict | Invalid


@dataclass(frozen=True)
class ResolutionReport:
    winner: bytes
    confirmed_branches: frozenset[bytes]
    rejected_branches: frozenset[bytes]
    rejected_transactions: frozenset[bytes]
    remerged_transactions: frozenset[bytes]


class TxState(enum.Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"


@dataclass
class _TxRecord:
    tx: Transaction
    arrival: float
    ledger_reality: frozenset[bytes]  # from spent outputs, plus own branch
    attribution: frozenset[bytes]  # from message ancestry only
    state: TxState = TxState.PENDING

    @property
    def reality(self) -> frozenset[bytes]:
        return self.ledger_reality | self.attribution


@dataclass
class OpCounter:
    lookups: int = 0


class UtxoLedger:
    """Single-writer ledger; reads between mutations are safe."""

    def __init__(self, genesis: Sequence[tuple[bytes, int]]):
        self.genesis = tuple((bytes(a), int(v)) for a, v in genesis)
        if not self.genesis:
            raise ValueError("genesis needs at least one output")
        self._outputs: dict[OutputRef, Output] = {}
        for i, (address, amount) in enumerate(self.genesis):
            if not 0 < amount <= MAX_AMOUNT or len(address) != DIGEST_SIZE:
                raise ValueError("genesis outputs need a 32-byte address and a positive amount")
            self._outputs[OutputRef(GENESIS_TX_ID, i)] = Output(address, amount)
        self._txs: dict[bytes, _TxRecord] = {}
        self._consumers: dict[OutputRef, list[bytes]] = defaultdict(list)
        self._spenders_of: dict[bytes, set[bytes]] = defaultdict(set)  # tx -> txs spending its outputs
        self._branches: dict[bytes, Branch] = {}
        self._realities: dict[bytes, frozenset[bytes]] = {MASTER: frozenset()}
        self._members: dict[bytes, set[bytes]] = defaultdict(set)  # branch -> txs whose reality holds it
        self.counter = OpCounter()

    # ------------------------------------------------------------------ queries

    @property
    def genesis_supply(self) -> int:
        return sum(v for _, v in self.genesis)

    def transaction(self, tx_id: bytes) -> Transaction:
        return self._txs[tx_id].tx

    def transactions(self) -> list[bytes]:
        return list(self._txs)

    def tx_state(self, tx_id: bytes) -> TxState:
        return self._txs[tx_id].state

    def output(self, ref: OutputRef) -> Output | None:
        return self._outputs.get(ref)

    def unspent_outputs(self) -> dict[OutputRef, Output]:
        return {ref: out for ref, out in self._outputs.items() if not self._live_consumers(ref)}

    def conflict_set(self, ref: OutputRef) -> set[bytes]:
        return set(self._consumers.get(ref, ()))

    def branch(self, branch_id: bytes) -> Branch:
        try:
            return self._branches[branch_id]
        except KeyError:
            raise UnknownBranch(branch_id.hex()) from None

    def branches(self) -> list[Branch]:
        return list(self._branches.values())

    def reality_of(self, branch_id: bytes) -> frozenset[bytes]:
        try:
            return self._realities[branch_id]
        except KeyError:
            raise UnknownBranch(branch_id.hex()) from None

    def branch_of_tx(self, tx_id: bytes) -> bytes:
        return self.branch_id_for(self._txs[tx_id].reality)

    def own_branch(self, tx_id: bytes) -> bytes | None:
        """The conflict branch created for ``tx_id``, if it is a conflict member."""
        return tx_id if tx_id in self._branches else None

    def status(self, branch_id: bytes) -> BranchStatus:
        """Status of a conflict branch or of a reality made of several of them."""
        if branch_id in self._branches:
            return self._branches[branch_id].status
        statuses = {self._branches[b].status for b in self.reality_of(branch_id)}
        if BranchStatus.REJECTED in statuses:
            return BranchStatus.REJECTED
        if BranchStatus.PENDING in statuses:
            return BranchStatus.PENDING
        return BranchStatus.CONFIRMED

    def branch_id_for(self, reality: Iterable[bytes]) -> bytes:
        reality = frozenset(reality)
        if not reality:
            return MASTER
        if len(reality) == 1:
            (only,) = reality
            self._realities.setdefault(only, reality)
            return only
        bid = content_hash(b"aggregate" + b"".join(sorted(reality)))
        self._realities.setdefault(bid, reality)
        return bid

    def siblings(self, branch_id: bytes) -> set[bytes]:
        b = self.branch(branch_id)
        return {m for m in b.conflict_members if m != branch_id}

    def mergeable(self, reality: Iterable[bytes]) -> bool:
        reality = frozenset(reality)
        for b in reality:
            if self._branches[b].status is BranchStatus.REJECTED:
                return False
            if self.siblings(b) & reality:
                return False
        return True

    def merge_branches(self, branch_ids: Iterable[bytes]) -> bytes | None:
        """Branch id of the union of several realities; None if they cannot coexist."""
        reality = frozenset().union(*(self.reality_of(b) for b in branch_ids))
        reality = self._drop_confirmed(reality)
        if not self.mergeable(reality):
            return None
        return self.branch_id_for(reality)

    def prune(self, branch_id: bytes) -> bytes:
        """Drop rejected and confirmed branches from a reality."""
        reality = {
            b for b in self.reality_of(branch_id)
            if self._branches[b].status is BranchStatus.PENDING
        }
        return self.branch_id_for(reality)

    # ----------------------------------------------------------------- mutation

    def apply_transaction(self, tx: Transaction, arrival_time: float, attribution: bytes = MASTER) -> ApplyOutcome:
        """Book ``tx``; ``attribution`` is the branch its message inherits from the tangle."""
        if (
            not tx.inputs
            or not tx.outputs
            or len(set(tx.inputs)) != len(tx.inputs)
            or any(not 0 < o.amount <= MAX_AMOUNT or len(o.address) != DIGEST_SIZE for o in tx.outputs)
        ):
            return Invalid(InvalidReason.MALFORMED)
        tx_id = tx.id
        if tx_id in self._txs:
            return Invalid(InvalidReason.DUPLICATE)

        spent = []
        for ref in tx.inputs:
            self.counter.lookups += 1
            out = self._outputs.get(ref)
            if out is None:
                return Invalid(InvalidReason.NONEXISTENT_INPUT)
            spent.append(out)
        if sum(o.amount for o in spent) != tx.amount:
            return Invalid(InvalidReason.BALANCE_MISMATCH)

        input_reality = frozenset()
        for ref in tx.inputs:
            self.counter.lookups += 1
            if ref.tx_id != GENESIS_TX_ID:
                input_reality |= self._txs[ref.tx_id].ledger_reality
        input_reality = self._drop_confirmed(input_reality)
        attributed = self._drop_confirmed(self.reality_of(attribution))
        if not self.mergeable(input_reality) or not self.mergeable(input_reality | attributed):
            return Invalid(InvalidReason.UNMERGEABLE_REALITIES)

        rivals = set()
        for ref in tx.inputs:
            self.counter.lookups += 1
            rivals.update(self._live_consumers(ref))
        if rivals:
            if any(self._txs[r].state is TxState.CONFIRMED for r in rivals):
                return Invalid(InvalidReason.ALREADY_SPENT)
            if rivals & self._utxo_ancestors(tx):
                return Invalid(InvalidReason.ALREADY_SPENT)
            for r in sorted(rivals):
                if r not in self._branches:
                    self._fork(r)
            input_reality = self._drop_confirmed(
                frozenset().union(
                    *(self._txs[ref.tx_id].ledger_reality for ref in tx.inputs if ref.tx_id != GENESIS_TX_ID)
                )
            )
            if not self.mergeable(input_reality) or not self.mergeable(input_reality | attributed):
                return Invalid(InvalidReason.UNMERGEABLE_REALITIES)

        record = _TxRecord(tx, arrival_time, input_reality, attributed - input_reality)
        self._txs[tx_id] = record
        for ref in tx.inputs:
            self._consumers[ref].append(tx_id)
            if ref.tx_id != GENESIS_TX_ID:
                self._spenders_of[ref.tx_id].add(tx_id)
        for i, out in enumerate(tx.outputs):
            self._outputs[OutputRef(tx_id, i)] = out

        if not rivals:
            self._index(tx_id)
            return Valid(self.branch_id_for(record.reality))

        self._branches[tx_id] = Branch(tx_id, self.branch_id_for(input_reality), set())
        record.ledger_reality = input_reality | {tx_id}
        self._realities[tx_id] = frozenset({tx_id})
        self._index(tx_id)
        # conflict sets are per output; a member's siblings are its rivals on any output
        for ref in tx.inputs:
            consumers = set(self._live_consumers(ref))
            for c in consumers:
                self._branches[c].conflict_members |= consumers
        conflict_set = frozenset(
            c for ref in tx.inputs for c in self._consumers[ref] if self._txs[c].state is not TxState.REJECTED
        )
        return Conflict(tx_id, conflict_set)

    def resolve_branches(self, winner: bytes) -> ResolutionReport:
        branch = self.branch(winner)
        if branch.status is not BranchStatus.PENDING:
            raise WinnerNotPending(winner.hex())

        confirmed: set[bytes] = set()
        losers: set[bytes] = set()
        to_confirm = [winner, *self._txs[winner].ledger_reality - {winner}]
        for b in to_confirm:
            if self._branches[b].status is BranchStatus.PENDING:
                self._branches[b].status = BranchStatus.CONFIRMED
                confirmed.add(b)
            losers |= {
                s for s in self._branches[b].conflict_members
                if s != b and self._branches[s].status is not BranchStatus.REJECTED
            }

        rejected_branches: set[bytes] = set()
        rejected_txs: set[bytes] = set()
        remerged: set[bytes] = set()
        frontier = list(losers)
        while frontier:
            b = frontier.pop()
            if b in rejected_branches:
                continue
            rejected_branches.add(b)
            self._branches[b].status = BranchStatus.REJECTED
            for t in sorted(self._members.get(b, ())):
                rec = self._txs[t]
                if rec.state is TxState.REJECTED:
                    continue
                if b in rec.ledger_reality:
                    self._reject_tx(t)
                    rejected_txs.add(t)
                    if t in self._branches and t not in rejected_branches:
                        frontier.append(t)
                elif b in rec.attribution:
                    remerged.add(t)

        for t in remerged - rejected_txs:
            rec = self._txs[t]
            rec.attribution = frozenset(rec.attribution - rejected_branches)
            self._index(t)
        for b in confirmed:
            self._txs[b].state = TxState.CONFIRMED
        return ResolutionReport(
            winner=winner,
            confirmed_branches=frozenset(confirmed),
            rejected_branches=frozenset(rejected_branches),
            rejected_transactions=frozenset(rejected_txs),
            remerged_transactions=frozenset(remerged - rejected_txs),
        )

    def confirm_transaction(self, tx_id: bytes) -> bool:
        """Finalize a transaction whose reality holds no pending branch.

        Later spends of its inputs are then invalid instead of conflicting.
        """
        rec = self._txs[tx_id]
        if rec.state is not TxState.PENDING:
            return rec.state is TxState.CONFIRMED
        if any(self._branches[b].status is not BranchStatus.CONFIRMED for b in rec.reality):
            return False
        rec.state = TxState.CONFIRMED
        return True

    # ---------------------------------------------------------------- internals

    def _live_consumers(self, ref: OutputRef) -> list[bytes]:
        return [c for c in self._consumers.get(ref, ()) if self._txs[c].state is not TxState.REJECTED]

    def _drop_confirmed(self, reality: frozenset[bytes]) -> frozenset[bytes]:
        return frozenset(b for b in reality if self._branches[b].status is not BranchStatus.CONFIRMED)

    def _index(self, tx_id: bytes) -> None:
        for b in self._txs[tx_id].reality:
            self._members[b].add(tx_id)

    def _utxo_ancestors(self, tx: Transaction) -> set[bytes]:
        seen: set[bytes] = set()
        stack = [ref.tx_id for ref in tx.inputs if ref.tx_id != GENESIS_TX_ID]
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            stack.extend(r.tx_id for r in self._txs[t].tx.inputs if r.tx_id != GENESIS_TX_ID)
        return seen

    def _fork(self, tx_id: bytes) -> None:
        """Turn an already booked transaction into a conflict member."""
        rec = self._txs[tx_id]
        self._branches[tx_id] = Branch(tx_id, self.branch_id_for(rec.ledger_reality), set())
        self._realities[tx_id] = frozenset({tx_id})
        stack = [tx_id]
        seen = set()
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            r = self._txs[t]
            r.ledger_reality = r.ledger_reality | {tx_id}
            r.attribution = r.attribution - {tx_id}
            self._index(t)
            stack.extend(self._spenders_of.get(t, ()))

    def _reject_tx(self, tx_id: bytes) -> None:
        rec = self._txs[tx_id]
        rec.state = TxState.REJECTED
        for i in range(len(rec.tx.outputs)):
            self._outputs.pop(OutputRef(tx_id, i), None)


def audit_ledger(ledger: UtxoLedger) -> list[str]:
    """Full scan of exclusivity and conservation; returns violation messages.

    The confirmed world is every non-rejected transaction whose reality holds
    only confirmed branches. Within it no output may be spent twice, every
    input must come from genesis or the world itself, and the unspent
    outputs must add up to the genesis supply.
    """
    problems = []
    for ref, consumers in ledger._consumers.items():
        members = [c for c in consumers if c in ledger._branches]
        confirmed = [m for m in members if ledger.branch(m).status is BranchStatus.CONFIRMED]
        if len(confirmed) > 1:
            problems.append(f"conflict on {ref} has {len(confirmed)} confirmed members")
        if confirmed and any(ledger.branch(m).status is BranchStatus.PENDING for m in members):
            problems.append(f"conflict on {ref} resolved but a rival is still pending")

    world = [
        t for t in ledger.transactions()
        if ledger.tx_state(t) is not TxState.REJECTED
        and all(ledger.branch(b).status is BranchStatus.CONFIRMED for b in ledger._txs[t].reality)
    ]
    in_world = set(world)
    produced = {OutputRef(GENESIS_TX_ID, i): amount for i, (_, amount) in enumerate(ledger.genesis)}
    for t in world:
        for i, out in enumerate(ledger.transaction(t).outputs):
            produced[OutputRef(t, i)] = out.amount
    spent: dict[OutputRef, bytes] = {}
    for t in world:
        for ref in ledger.transaction(t).inputs:
            if ref.tx_id != GENESIS_TX_ID and ref.tx_id not in in_world:
                problems.append(f"{t.hex()} spends {ref} from outside the confirmed world")
            if ref in spent:
                problems.append(f"{ref} spent by both {spent[ref].hex()} and {t.hex()}")
            spent[ref] = t
    supply = sum(v for ref, v in produced.items() if ref not in spent)
    if supply != ledger.genesis_supply:
        problems.append(f"confirmed supply {supply} != genesis supply {ledger.genesis_supply}")
    return problems
