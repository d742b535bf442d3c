"""Access and consensus mana with lazy half-life decay."""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Hashable

from .rng import Xoshiro256
from .utxo import Transaction


class ManaKind(enum.Enum):
    ACCESS = "access"
    CONSENSUS = "consensus"


@dataclass
class ManaRecord:
    access: float = 0.0
    consensus: float = 0.0
    last_update: float = 0.0

    def value(self, kind: ManaKind) -> float:
        return self.access if kind is ManaKind.ACCESS else self.consensus


@dataclass(frozen=True)
class ManaParams:
    half_life: float = 3600.0  # sim-seconds; math.inf disables decay

    def __post_init__(self):
        if not self.half_life > 0:
            raise ValueError("half_life must be positive")


def decay_factor(elapsed: float, half_life: float) -> float:
    if math.isinf(half_life) or elapsed == 0:
        return 1.0
    return 2.0 ** (-elapsed / half_life)


class ManaLedger:
    """Per-node mana, keyed by any hashable node identifier.

    Nodes are kept in registration order, which fixes the sampler's
    cumulative layout and makes sampling deterministic for a given stream.
    """

    def __init__(self, params: ManaParams | None = None):
        self.params = params or ManaParams()
        self._records: dict[Hashable, ManaRecord] = {}

    def __contains__(self, node) -> bool:
        return node in self._records

    def nodes(self) -> list:
        return list(self._records)

    def register(self, node, access: float = 0.0, consensus: float = 0.0, now: float = 0.0) -> None:
        if access < 0 or consensus < 0 or not (math.isfinite(access) and math.isfinite(consensus)):
            raise ValueError("mana endowments are finite and non-negative")
        if node in self._records:
            self._bring_current(node, now)
            rec = self._records[node]
            rec.access += access
            rec.consensus += consensus
        else:
            self._records[node] = ManaRecord(access, consensus, now)

    def record(self, node) -> ManaRecord:
        return self._records[node]

    def _bring_current(self, node, now: float) -> ManaRecord:
        rec = self._records.get(node)
        if rec is None:
            # unknown pledge targets join with zero mana
            rec = self._records[node] = ManaRecord(last_update=now)
            return rec
        if now < rec.last_update:
            raise ValueError("mana cannot be read before its last update")
        f = decay_factor(now - rec.last_update, self.params.half_life)
        rec.access *= f
        rec.consensus *= f
        rec.last_update = now
        return rec

    def pledge(self, now: float, access_to=None, consensus_to=None, amount: float = 0.0) -> None:
        if access_to is not None:
            self._bring_current(access_to, now).access += amount
        if consensus_to is not None:
            self._bring_current(consensus_to, now).consensus += amount

    def pledge_on_transaction(self, tx: Transaction, now: float) -> None:
        self.pledge(now, tx.access_pledge, tx.consensus_pledge, tx.amount)

    def decayed_mana(self, node, kind: ManaKind, now: float) -> float:
        rec = self._records.get(node)
        if rec is None:
            return 0.0
        if now < rec.last_update:
            raise ValueError("mana cannot be read before its last update")
        return rec.value(kind) * decay_factor(now - rec.last_update, self.params.half_life)

    def values(self, kind: ManaKind, now: float) -> dict:
        return {n: self.decayed_mana(n, kind, now) for n in self._records}

    def total(self, kind: ManaKind, now: float) -> float:
        return sum(self.values(kind, now).values())

    def mana_share(self, node, kind: ManaKind, now: float) -> float:
        values = self.values(kind, now)
        total = sum(values.values())
        if total <= 0:
            return 1.0 / len(values) if node in values else 0.0
        return values.get(node, 0.0) / total

    def shares(self, kind: ManaKind, now: float) -> dict:
        values = self.values(kind, now)
        total = sum(values.values())
        if total <= 0:
            return {n: 1.0 / len(values) for n in values}
        return {n: v / total for n, v in values.items()}

    def sample_by_consensus_mana(self, rng: Xoshiro256, now: float):
        """Draw a node with probability equal to its consensus-mana share."""
        values = self.values(ManaKind.CONSENSUS, now)
        nodes = list(values)
        if not nodes:
            raise ValueError("no nodes registered")
        cum = []
        acc = 0.0
        for n in nodes:
            acc += values[n]
            cum.append(acc)
        if acc <= 0:
            return nodes[rng.randbelow(len(nodes))]
        x = rng.random() * acc
        return nodes[min(bisect_right(cum, x), len(nodes) - 1)]
