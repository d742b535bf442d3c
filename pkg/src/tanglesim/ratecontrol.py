"""Adaptive PoW difficulty and the access-mana issuance quota."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass

from .mana import ManaKind, ManaLedger
from .rng import Xoshiro256


@dataclass(frozen=True)
class PowParams:
    base_difficulty: int = 8
    gamma: float = 0.1  # extra bits per message in the window
    window: float = 60.0  # sim-seconds
    hash_rate: float = 1e6  # hashes per sim-second
    count_attempts: bool = False  # count attempted rather than attached messages

    def __post_init__(self):
        if self.base_difficulty < 0 or self.gamma < 0:
            raise ValueError("base difficulty and gamma must be non-negative")
        if self.window <= 0 or self.hash_rate <= 0:
            raise ValueError("window and hash rate must be positive")


def difficulty_from_rate(recent: int, params: PowParams) -> int:
    """``d0 + ceil(gamma * r)``, with a guard against float round-up (0.1 * 30)."""
    return params.base_difficulty + math.ceil(params.gamma * recent - 1e-9)


def expected_work_time(difficulty: int, hash_rate: float) -> float:
    return 2.0**difficulty / hash_rate


def pow_work_time(difficulty: int, rng: Xoshiro256, hash_rate: float) -> float:
    """Simulated solve time: geometric attempt count at success probability 2^-d."""
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    return rng.geometric(2.0**-difficulty) / hash_rate


class RateController:
    """Tracks each node's issuances over the sliding window."""

    def __init__(self, params: PowParams | None = None):
        self.params = params or PowParams()
        self._stamps: dict[object, deque[float]] = defaultdict(deque)

    def record_issuance(self, node, now: float) -> None:
        self._stamps[node].append(now)

    def recent_count(self, node, now: float) -> int:
        stamps = self._stamps[node]
        horizon = now - self.params.window
        while stamps and stamps[0] <= horizon:
            stamps.popleft()
        return sum(1 for t in stamps if t <= now)

    def difficulty_for(self, node, now: float) -> int:
        return difficulty_from_rate(self.recent_count(node, now), self.params)

    def pow_work_time(self, difficulty: int, rng: Xoshiro256) -> float:
        return pow_work_time(difficulty, rng, self.params.hash_rate)


def scheduler_quota(node, now: float, budget: float, mana: ManaLedger) -> float:
    """Messages per sim-second ``node`` may issue: its access-mana share of ``budget``."""
    if budget <= 0:
        raise ValueError("network issue budget must be positive")
    return mana.mana_share(node, ManaKind.ACCESS, now) * budget
