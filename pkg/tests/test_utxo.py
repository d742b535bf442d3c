import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanglesim.crypto import content_hash, node_id
from tanglesim.errors import UnknownBranch, WinnerNotPending
from tanglesim.utxo import (
    GENESIS_TX_ID,
    MASTER,
    BranchStatus,
    Conflict,
    Invalid,
    InvalidReason,
    Output,
    OutputRef,
    Transaction,
    TxState,
    UtxoLedger,
    Valid,
    audit_ledger,
    decode_transaction,
    encode_transaction,
)

NODE = node_id(0)


def addr(tag) -> bytes:
    return content_hash(str(tag).encode())


def g(i: int) -> OutputRef:
    return OutputRef(GENESIS_TX_ID, i)


def tx(inputs, amounts, tag="") -> Transaction:
    return Transaction(
        inputs=tuple(inputs),
        outputs=tuple(Output(addr(f"{tag}:{i}"), a) for i, a in enumerate(amounts)),
        access_pledge=NODE,
        consensus_pledge=NODE,
    )


def out(t: Transaction, i: int) -> OutputRef:
    return OutputRef(t.id, i)


@pytest.fixture
def ledger():
    return UtxoLedger([(addr("g0"), 100), (addr("g1"), 50), (addr("g2"), 30)])


def test_first_spend_valid_master(ledger):
    t1 = tx([g(0)], [60, 40], "t1")
    assert ledger.apply_transaction(t1, 1.0) == Valid(MASTER)
    assert ledger.conflict_set(g(0)) == {t1.id}
    assert ledger.conflict_set(g(1)) == set()


def test_double_spend_creates_sibling_branches(ledger):
    t1 = tx([g(0)], [60, 40], "t1")
    t2 = tx([g(0)], [100], "t2")
    ledger.apply_transaction(t1, 1.0)
    res = ledger.apply_transaction(t2, 2.0)
    assert isinstance(res, Conflict)
    assert res.conflict_set == {t1.id, t2.id}
    assert ledger.siblings(t1.id) == {t2.id}
    assert ledger.siblings(t2.id) == {t1.id}
    assert ledger.branch_of_tx(t1.id) == t1.id
    assert ledger.status(t1.id) is BranchStatus.PENDING


def test_balance_mismatch(ledger):
    assert ledger.apply_transaction(tx([g(0)], [90]), 1.0) == Invalid(InvalidReason.BALANCE_MISMATCH)


def test_nonexistent_input(ledger):
    bogus = OutputRef(content_hash(b"nothing"), 0)
    assert ledger.apply_transaction(tx([bogus], [1]), 1.0) == Invalid(InvalidReason.NONEXISTENT_INPUT)
    assert ledger.apply_transaction(tx([g(7)], [1]), 1.0) == Invalid(InvalidReason.NONEXISTENT_INPUT)


def test_malformed_and_duplicate(ledger):
    assert ledger.apply_transaction(tx([], [1]), 1.0) == Invalid(InvalidReason.MALFORMED)
    assert ledger.apply_transaction(tx([g(0), g(0)], [200]), 1.0) == Invalid(InvalidReason.MALFORMED)
    t1 = tx([g(0)], [100])
    ledger.apply_transaction(t1, 1.0)
    assert ledger.apply_transaction(t1, 2.0) == Invalid(InvalidReason.DUPLICATE)


def test_triple_spend(ledger):
    ts = [tx([g(0)], [100], f"t{i}") for i in range(3)]
    for t in ts:
        ledger.apply_transaction(t, 1.0)
    assert ledger.conflict_set(g(0)) == {t.id for t in ts}
    for t in ts:
        assert ledger.siblings(t.id) == {u.id for u in ts} - {t.id}


def test_resolve_two_branch_conflict(ledger):
    t1 = tx([g(0)], [60, 40], "t1")
    t2 = tx([g(0)], [100], "t2")
    ledger.apply_transaction(t1, 1.0)
    ledger.apply_transaction(t2, 2.0)
    rep = ledger.resolve_branches(t1.id)
    assert rep.winner == t1.id
    assert rep.confirmed_branches == {t1.id}
    assert rep.rejected_branches == {t2.id}
    assert rep.rejected_transactions == {t2.id}
    assert ledger.tx_state(t1.id) is TxState.CONFIRMED
    assert ledger.tx_state(t2.id) is TxState.REJECTED
    assert audit_ledger(ledger) == []
    with pytest.raises(WinnerNotPending):
        ledger.resolve_branches(t1.id)


def test_unknown_branch(ledger):
    with pytest.raises(UnknownBranch):
        ledger.resolve_branches(content_hash(b"nope"))


def test_child_of_loser_rejected_and_attributed_tx_remerged(ledger):
    t1 = tx([g(0)], [60, 40], "t1")
    t2 = tx([g(0)], [100], "t2")
    ledger.apply_transaction(t1, 1.0)
    ledger.apply_transaction(t2, 2.0)
    t3 = tx([out(t2, 0)], [100], "t3")
    assert isinstance(ledger.apply_transaction(t3, 3.0), Valid)
    assert ledger.branch_of_tx(t3.id) == t2.id
    # t4 spends only genesis funds but its message hangs below t2's message
    t4 = tx([g(1)], [50], "t4")
    assert ledger.apply_transaction(t4, 3.0, attribution=t2.id) == Valid(t2.id)
    rep = ledger.resolve_branches(t1.id)
    assert rep.rejected_transactions == {t2.id, t3.id}
    assert rep.remerged_transactions == {t4.id}
    assert ledger.branch_of_tx(t4.id) == MASTER
    assert ledger.output(out(t3, 0)) is None
    assert ledger.output(out(t4, 0)) is not None
    assert audit_ledger(ledger) == []


def test_spend_after_confirmation_is_already_spent(ledger):
    t1 = tx([g(0)], [100], "t1")
    ledger.apply_transaction(t1, 1.0)
    assert ledger.confirm_transaction(t1.id)
    assert ledger.apply_transaction(tx([g(0)], [100], "late"), 2.0) == Invalid(InvalidReason.ALREADY_SPENT)


def test_spending_both_siblings_is_unmergeable(ledger):
    t1 = tx([g(0)], [100], "t1")
    t2 = tx([g(0)], [100], "t2")
    ledger.apply_transaction(t1, 1.0)
    ledger.apply_transaction(t2, 1.0)
    both = tx([out(t1, 0), out(t2, 0)], [200], "both")
    assert ledger.apply_transaction(both, 2.0) == Invalid(InvalidReason.UNMERGEABLE_REALITIES)
    assert ledger.merge_branches([t1.id, t2.id]) is None


def test_late_conflict_forks_descendants(ledger):
    t1 = tx([g(0)], [100], "t1")
    ledger.apply_transaction(t1, 1.0)
    c1 = tx([out(t1, 0)], [100], "c1")
    ledger.apply_transaction(c1, 2.0)
    assert ledger.branch_of_tx(c1.id) == MASTER
    t2 = tx([g(0)], [100], "t2")
    ledger.apply_transaction(t2, 3.0)
    # c1 now lives in t1's reality
    assert ledger.branch_of_tx(c1.id) == t1.id
    rep = ledger.resolve_branches(t2.id)
    assert rep.rejected_transactions == {t1.id, c1.id}


def test_apply_lookups_independent_of_ledger_size():
    def cost(n_prior):
        led = UtxoLedger([(addr(i), 10) for i in range(n_prior + 1)])
        for i in range(n_prior):
            led.apply_transaction(tx([g(i)], [10], f"p{i}"), 1.0)
        before = led.counter.lookups
        led.apply_transaction(tx([g(n_prior)], [10], "probe"), 2.0)
        return led.counter.lookups - before

    assert cost(10) == cost(1000)


def test_transaction_codec_round_trip():
    t = tx([g(0), g(1)], [70, 80], "x")
    assert decode_transaction(encode_transaction(t)) == t


# ------------------------------------------------------------------------
# brute-force reference: each transaction's fate follows from its UTXO
# ancestry alone, and conflicts are found by rescanning everything applied


def reference_conflicts(applied: list[Transaction]) -> dict[OutputRef, set[bytes]]:
    found: dict[OutputRef, set[bytes]] = {}
    for t in applied:
        for ref in t.inputs:
            found.setdefault(ref, set()).add(t.id)
    return found


def ancestry(t: Transaction, by_id: dict[bytes, Transaction]) -> set[bytes]:
    seen, stack = set(), [t.id]
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(r.tx_id for r in by_id[cur].inputs if r.tx_id in by_id)
    return seen


def test_six_transaction_fixture_matches_brute_force():
    led = UtxoLedger([(addr("a"), 100), (addr("b"), 40), (addr("c"), 25)])
    t1 = tx([g(0)], [60, 40], "t1")
    t2 = tx([g(0)], [100], "t2")
    t3 = tx([out(t2, 0)], [50, 50], "t3")
    t4 = tx([g(1)], [40], "t4")  # attributed to t2 via message ancestry
    t5 = tx([out(t1, 1)], [40], "t5")
    t6 = tx([g(2), out(t3, 1)], [75], "t6")
    attribution = {t4.id: t2.id}
    applied = [t1, t2, t3, t4, t5, t6]
    for t in applied:
        led.apply_transaction(t, 1.0, attribution=attribution.get(t.id, MASTER))
    by_id = {t.id: t for t in applied}

    ref = reference_conflicts(applied)
    for r, members in ref.items():
        assert led.conflict_set(r) == members

    rep = led.resolve_branches(t1.id)
    losers = {t2.id}
    expect_rejected = {t.id for t in applied if ancestry(t, by_id) & losers}
    expect_remerged = {
        tid for tid, b in attribution.items() if b in losers and tid not in expect_rejected
    }
    assert rep.rejected_transactions == expect_rejected == {t2.id, t3.id, t6.id}
    assert rep.remerged_transactions == expect_remerged == {t4.id}
    assert audit_ledger(led) == []


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_histories_keep_invariants(seed):
    """Random spends, double spends and resolutions on fixtures up to 50 transactions."""
    rnd = random.Random(seed)
    led = UtxoLedger([(addr(f"g{i}"), 10 * (i + 1)) for i in range(5)])
    applied: list[Transaction] = []
    for step in range(50):
        live = [
            (ref, o) for ref, o in led.unspent_outputs().items()
        ] + [
            (r, led.output(r)) for t in applied for r in (OutputRef(t.id, i) for i in range(len(t.outputs)))
            if led.output(r) is not None
        ]
        if not live:
            break
        k = min(len(live), rnd.randint(1, 2))
        chosen = rnd.sample(live, k)
        chosen = list({r: o for r, o in chosen}.items())
        total = sum(o.amount for _, o in chosen)
        split = [total] if total < 2 or rnd.random() < 0.5 else [total // 2, total - total // 2]
        t = tx([r for r, _ in chosen], split, f"s{seed}:{step}")
        res = led.apply_transaction(t, float(step))
        if not isinstance(res, Invalid):
            applied.append(t)
        if rnd.random() < 0.2:
            pending = sorted(b.branch_id for b in led.branches() if b.status is BranchStatus.PENDING)
            if pending:
                led.resolve_branches(rnd.choice(pending))
        assert not [p for p in audit_ledger(led) if "confirmed members" in p or "spent by both" in p]
    # resolve everything, then the full audit must be clean
    while True:
        pending = sorted(b.branch_id for b in led.branches() if b.status is BranchStatus.PENDING)
        if not pending:
            break
        led.resolve_branches(pending[0])
    assert audit_ledger(led) == []
    for ref, members in reference_conflicts(applied).items():
        confirmed = [m for m in members if m in {b.branch_id for b in led.branches()}
                     and led.status(m) is BranchStatus.CONFIRMED]
        assert len(confirmed) <= 1
    for a, b in itertools.combinations(applied, 2):
        if led.tx_state(a.id) is not TxState.REJECTED and led.tx_state(b.id) is not TxState.REJECTED:
            assert not set(a.inputs) & set(b.inputs)
