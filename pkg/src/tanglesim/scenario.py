"""Whole-Tangle scenarios on a discrete-event clock.

Pipeline per message: Poisson issue request, access-mana quota gate (when a
scheduler budget is set), adaptive PoW delay, tip selection and local attach,
then delivery into the shared ledger view after the propagation delay.
Confirmation sweeps run every ``sweep_interval`` sim-seconds.

Trace records are one line each: ``<time> <event> <fields...>`` with time
printed to microseconds and ids as hex. Events:

    issue      node seq
    defer      node seq until
    pow        node seq difficulty done_at
    attach     node message_id parent_id...
    deliver    message_id outcome
    drop       message_id check
    conflict   tx_id member...
    resolve    winner_tx rejected=<n> remerged=<n>
    confirm    message_id
    orphan     message_id
    doublespend node tx_id output_ref
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import TextIO

from .crypto import content_hash, node_id
from .errors import InvariantViolation, NoEligibleTips
from .events import EventQueue
from .fpc import Opinion, first_seen_opinions
from .mana import ManaKind, ManaLedger, ManaParams
from .message import DataPayload, Message, ValueTxPayload, build_and_sign, validate
from .metrics import ConflictOutcome, MetricsRow
from .ratecontrol import PowParams, RateController, scheduler_quota
from .rng import Xoshiro256
from .tangle import GENESIS_ANCHORS, Tangle
from .utxo import GENESIS_TX_ID, Conflict, Invalid, Output, OutputRef, Transaction, UtxoLedger


def node_address(index: int) -> bytes:
    return content_hash(b"address:" + node_id(index))


@dataclass(frozen=True)
class DoubleSpend:
    time: float
    output: OutputRef
    spenders: tuple[int, int]


@dataclass(frozen=True)
class GenesisOutput:
    address: bytes
    amount: int


@dataclass(frozen=True)
class ScenarioConfig:
    nodes: int = 10
    issue_rate: float = 1.0
    # per-node overrides of issue_rate; None keeps the common rate
    issue_rates: tuple[float, ...] | None = None
    duration: float = 300.0
    eligibility_age: float = 30.0
    confirmation_threshold: float = 0.5
    propagation_delay: float = 0.1
    tip_pool_target: int = 100
    sweep_interval: float = 1.0
    access_mana: tuple[float, ...] | None = None
    consensus_mana: tuple[float, ...] | None = None
    half_life: float = 3600.0
    pow: PowParams = field(default_factory=PowParams)
    scheduler_budget: float | None = None
    genesis: tuple[GenesisOutput, ...] | None = None
    double_spend_schedule: tuple[DoubleSpend, ...] = ()
    seed: int = 0

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.nodes < 1:
            raise InvariantViolation("nodes", "at least one node")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise InvariantViolation("duration", "duration > 0")
        if not self.issue_rate >= 0:
            raise InvariantViolation("issueRate", "λ ≥ 0")
        if self.issue_rates is not None:
            if len(self.issue_rates) != self.nodes:
                raise InvariantViolation("issueRates", "one rate per node")
            if any(not r >= 0 for r in self.issue_rates):
                raise InvariantViolation("issueRates", "λ ≥ 0")
        if not self.eligibility_age > 0:
            raise InvariantViolation("eligibilityAge", "Δ > 0")
        if not 0 < self.confirmation_threshold <= 1:
            raise InvariantViolation("confirmationThreshold", "θ ∈ (0, 1]")
        if not self.propagation_delay >= 0:
            raise InvariantViolation("propagationDelay", "propagation delay ≥ 0")
        if self.tip_pool_target < 1:
            raise InvariantViolation("tipPoolTarget", "tip pool target ≥ 1")
        if not self.sweep_interval > 0:
            raise InvariantViolation("sweepInterval", "sweep interval > 0")
        if not self.half_life > 0:
            raise InvariantViolation("mana.halfLife", "half-life > 0")
        for key, values in (("mana.access", self.access_mana), ("mana.consensus", self.consensus_mana)):
            if values is None:
                continue
            if len(values) != self.nodes:
                raise InvariantViolation(key, "one endowment per node")
            if any(not (v >= 0 and math.isfinite(v)) for v in values):
                raise InvariantViolation(key, "endowments finite and non-negative")
        if self.scheduler_budget is not None and not self.scheduler_budget > 0:
            raise InvariantViolation("scheduler.budget", "budget > 0 or null")
        if not 0 <= self.seed < 2**64:
            raise InvariantViolation("seed", "seed is a 64-bit unsigned integer")
        genesis = self.resolved_genesis()
        if not genesis or any(g.amount <= 0 for g in genesis):
            raise InvariantViolation("genesis", "at least one positive output")
        for ds in self.double_spend_schedule:
            if not 0 <= ds.time <= self.duration:
                raise InvariantViolation("doubleSpendSchedule", "schedule times within [0, duration]")
            a, b = ds.spenders
            if a == b or not (0 <= a < self.nodes and 0 <= b < self.nodes):
                raise InvariantViolation("doubleSpendSchedule", "two distinct spender nodes")

    def resolved_genesis(self) -> tuple[GenesisOutput, ...]:
        if self.genesis is not None:
            return self.genesis
        return tuple(GenesisOutput(node_address(i), 1000) for i in range(self.nodes))

    def rate_of(self, node: int) -> float:
        return self.issue_rates[node] if self.issue_rates is not None else self.issue_rate

    def endowment(self, kind: ManaKind, node: int) -> float:
        values = self.access_mana if kind is ManaKind.ACCESS else self.consensus_mana
        return 1000.0 if values is None else values[node]


@dataclass
class NodeStats:
    requested: int = 0
    attached: int = 0
    delivered: int = 0
    difficulties: list[int] = field(default_factory=list)


@dataclass
class ScenarioResult:
    metrics: MetricsRow
    trace: list[str]
    tangle: Tangle
    ledger: UtxoLedger
    mana: ManaLedger
    node_stats: list[NodeStats]
    duration: float

    def attach_rate(self, node: int) -> float:
        return self.node_stats[node].delivered / self.duration

    def write_trace(self, out: TextIO) -> None:
        for line in self.trace:
            out.write(line + "\n")


@dataclass
class _Worker:
    queue: deque = field(default_factory=deque)
    busy: bool = False
    waiting: bool = False
    last_start: float = -math.inf


def _fmt(t: float) -> str:
    return f"{t:.6f}"


class _Run:
    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.ids = [node_id(i) for i in range(config.nodes)]
        self.index_of = {nid: i for i, nid in enumerate(self.ids)}
        genesis = config.resolved_genesis()
        self.ledger = UtxoLedger([(g.address, g.amount) for g in genesis])
        self.tangle = Tangle(
            eligibility_age=config.eligibility_age,
            confirmation_threshold=config.confirmation_threshold,
            tip_pool_target=config.tip_pool_target,
            ledger=self.ledger,
        )
        self.mana = ManaLedger(ManaParams(config.half_life))
        for i, nid in enumerate(self.ids):
            self.mana.register(
                nid,
                access=config.endowment(ManaKind.ACCESS, i),
                consensus=config.endowment(ManaKind.CONSENSUS, i),
            )
        self.rate = RateController(config.pow)
        self.queue = EventQueue()
        self.trace: list[str] = []
        self.stats = [NodeStats() for _ in self.ids]
        self.workers = [_Worker() for _ in self.ids]
        seed = config.seed
        self.issue_rng = [Xoshiro256.child(seed, "issue", i) for i in range(config.nodes)]
        self.pow_rng = [Xoshiro256.child(seed, "pow", i) for i in range(config.nodes)]
        self.tip_rng = [Xoshiro256.child(seed, "tips", i) for i in range(config.nodes)]
        # tx id -> {node index -> time the node first saw it}
        self.arrivals: dict[bytes, dict[int, float]] = {}
        self.outcomes: list[ConflictOutcome] = []

    def log(self, t: float, *parts) -> None:
        self.trace.append(" ".join([_fmt(t), *map(str, parts)]))

    # -------------------------------------------------------------- schedule

    def seed_events(self) -> None:
        cfg = self.cfg
        for i in range(cfg.nodes):
            rate = cfg.rate_of(i)
            if rate > 0:
                self.queue.push(self.issue_rng[i].exponential(rate), "issue", i)
        for ds in cfg.double_spend_schedule:
            self.queue.push(ds.time, "doublespend", ds)
        ticks = math.floor(cfg.duration / cfg.sweep_interval + 1e-9)
        for j in range(1, ticks + 1):
            self.queue.push(j * cfg.sweep_interval, "sweep")

    def run(self) -> ScenarioResult:
        self.seed_events()
        handlers = {
            "issue": self.on_issue,
            "wake": self.on_wake,
            "powdone": self.on_pow_done,
            "deliver": self.on_deliver,
            "sweep": self.on_sweep,
            "doublespend": self.on_double_spend,
        }
        end = self.cfg.duration
        while self.queue and self.queue.peek_time() <= end:
            ev = self.queue.pop()
            handlers[ev.kind](ev.time, ev.data)
        return self.result()

    # ---------------------------------------------------------------- issue

    def on_issue(self, t: float, i: int) -> None:
        st = self.stats[i]
        seq = st.requested
        st.requested += 1
        self.log(t, "issue", i, seq)
        payload = DataPayload(b"node:%d:msg:%d" % (i, seq))
        self.workers[i].queue.append((seq, payload))
        self.queue.push(t + self.issue_rng[i].exponential(self.cfg.rate_of(i)), "issue", i)
        self.start_work(t, i)

    def on_double_spend(self, t: float, ds: DoubleSpend) -> None:
        out = self.ledger.output(ds.output)
        if out is None:
            self.log(t, "doublespend-skipped", str(ds.output))
            return
        for spender in ds.spenders:
            nid = self.ids[spender]
            tx = Transaction(
                inputs=(ds.output,),
                outputs=(Output(content_hash(b"spend:" + nid + ds.output.tx_id), out.amount),),
                access_pledge=nid,
                consensus_pledge=nid,
            )
            self.log(t, "doublespend", spender, tx.id.hex(), str(ds.output))
            seq = self.stats[spender].requested
            self.stats[spender].requested += 1
            self.workers[spender].queue.append((seq, ValueTxPayload(tx)))
            self.start_work(t, spender)

    def on_wake(self, t: float, i: int) -> None:
        self.workers[i].waiting = False
        self.start_work(t, i)

    def start_work(self, t: float, i: int) -> None:
        w = self.workers[i]
        if w.busy or w.waiting or not w.queue:
            return
        cfg = self.cfg
        if cfg.scheduler_budget is not None:
            quota = scheduler_quota(self.ids[i], t, cfg.scheduler_budget, self.mana)
            ready = w.last_start + 1.0 / quota if quota > 0 else math.inf
            if ready > t:
                until = ready if math.isfinite(ready) else t + cfg.sweep_interval
                w.waiting = True
                self.log(t, "defer", i, w.queue[0][0], _fmt(until))
                self.queue.push(until, "wake", i)
                return
        seq, payload = w.queue.popleft()
        w.busy = True
        w.last_start = t
        nid = self.ids[i]
        if cfg.pow.count_attempts:
            self.rate.record_issuance(nid, t)
        d = self.rate.difficulty_for(nid, t)
        self.stats[i].difficulties.append(d)
        done = t + self.rate.pow_work_time(d, self.pow_rng[i])
        self.log(t, "pow", i, seq, d, _fmt(done))
        self.queue.push(done, "powdone", (i, payload))

    def on_pow_done(self, t: float, data) -> None:
        i, payload = data
        nid = self.ids[i]
        rng = self.tip_rng[i]
        try:
            parents = self.tangle.select_tips(t, rng, node=nid)
        except NoEligibleTips as exc:
            raise NoEligibleTips(
                f"node {i} found no eligible tips at t={t:.6f} (eligibility age {self.cfg.eligibility_age})"
            ) from exc
        msg = build_and_sign(nid, parents, payload, t, nonce=rng.next_u64())
        self.stats[i].attached += 1
        if not self.cfg.pow.count_attempts:
            self.rate.record_issuance(nid, t)
        if isinstance(payload, ValueTxPayload):
            self.arrivals.setdefault(payload.transaction.id, {})[i] = t
        self.log(t, "attach", i, msg.id.hex(), *(p.hex() for p in parents))
        self.queue.push(t + self.cfg.propagation_delay, "deliver", msg)
        self.workers[i].busy = False
        self.start_work(t, i)

    # -------------------------------------------------------------- deliver

    def on_deliver(self, t: float, msg: Message) -> None:
        mid = msg.id
        verdict = validate(msg, t, 0)
        if not verdict.ok:
            self.log(t, "drop", mid.hex(), verdict.failed.value)
            return
        self.tangle.attach(msg, t)
        self.stats[self.index_of[msg.issuer_id]].delivered += 1
        outcome = self.tangle.last_outcome
        label = "data" if outcome is None else type(outcome).__name__.lower()
        if isinstance(outcome, Invalid):
            label += ":" + outcome.reason.value
        self.log(t, "deliver", mid.hex(), label)
        if isinstance(msg.payload, ValueTxPayload) and not isinstance(outcome, Invalid):
            tx_id = msg.payload.transaction.id
            seen = self.arrivals.setdefault(tx_id, {})
            for j in range(self.cfg.nodes):
                seen.setdefault(j, t)
            self.mana.pledge_on_transaction(msg.payload.transaction, t)
            if isinstance(outcome, Conflict):
                self.log(t, "conflict", tx_id.hex(), *(m.hex() for m in sorted(outcome.conflict_set)))
                self.assign_opinions(outcome.conflict_set)

    def assign_opinions(self, members) -> None:
        """Each node likes whichever conflict member it saw first."""
        per_node: dict[int, dict[bytes, float]] = {j: {} for j in range(self.cfg.nodes)}
        for tx_id in sorted(members):
            for j, when in self.arrivals.get(tx_id, {}).items():
                per_node[j][tx_id] = when
        for j, ops in first_seen_opinions(per_node).items():
            for tx_id, op in ops.items():
                self.tangle.set_opinion(self.ids[j], tx_id, op is Opinion.LIKE)

    # ---------------------------------------------------------------- sweep

    def on_sweep(self, t: float, _data) -> None:
        view = self.mana.values(ManaKind.CONSENSUS, t)
        res = self.tangle.confirmation_sweep(t, view)
        for r in res.resolutions:
            rejected = tuple(sorted(m.hex() for m in r.rejected_messages))
            self.outcomes.append(ConflictOutcome(r.report.winner.hex(), rejected, len(r.remerged_messages)))
            self.log(t, "resolve", r.report.winner.hex(), f"rejected={len(rejected)}", f"remerged={len(r.remerged_messages)}")
        for mid in sorted(res.confirmed):
            self.log(t, "confirm", mid.hex())
        for mid in sorted(res.orphaned):
            self.log(t, "orphan", mid.hex())

    # --------------------------------------------------------------- result

    def result(self) -> ScenarioResult:
        cfg = self.cfg
        metas = [m for mid, m in self.tangle.metadata.items() if mid not in GENESIS_ANCHORS]
        attached = len(metas)
        delays = [
            m.confirmation_time - self.tangle.messages[mid].timestamp
            for mid, m in self.tangle.metadata.items()
            if mid not in GENESIS_ANCHORS and m.confirmed
        ]
        orphaned = sum(m.orphaned for m in metas)
        metrics = MetricsRow(
            tps=attached / cfg.duration,
            mean_confirmation_time=sum(delays) / len(delays) if delays else None,
            orphan_rate=orphaned / attached if attached else None,
            conflict_outcomes=tuple(self.outcomes),
            attached=attached,
            confirmed=len(delays),
        )
        return ScenarioResult(
            metrics=metrics,
            trace=self.trace,
            tangle=self.tangle,
            ledger=self.ledger,
            mana=self.mana,
            node_stats=self.stats,
            duration=cfg.duration,
        )


def run_tangle_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run one scenario to ``config.duration``; deterministic in ``config``."""
    return _Run(config).run()


def genesis_ref(index: int) -> OutputRef:
    return OutputRef(GENESIS_TX_ID, index)
