"""Fast Probabilistic Consensus: leaderless binary voting on a single conflict.

Each honest node repeatedly queries ``k`` other nodes, forms the (optionally
mana-weighted) fraction ``eta`` of Like answers and adopts Like iff ``eta``
strictly exceeds the round threshold. Round 1 uses a fixed threshold; later
rounds use a threshold that is common to all nodes and drawn from a shared
seeded generator standing in for the dRNG. A node finalizes once its
opinion has stayed unchanged for ``l`` consecutive rounds.

All nodes are stepped together with numpy; every node draws from its own
random sub-stream, so a run is a pure function of its config.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InvariantViolation, QuorumInfeasible
from .rng import StreamBank, Xoshiro256, derive_seed


class Opinion(enum.IntEnum):
    DISLIKE = 0
    LIKE = 1


class AdversaryStrategy(str, enum.Enum):
    INVERSE_MAJORITY = "InverseMajority"
    FIXED_LIKE = "FixedLike"
    FIXED_DISLIKE = "FixedDislike"
    RANDOM_OPINION = "RandomOpinion"


_EPS = 1e-9


@dataclass(frozen=True)
class FpcConfig:
    """Parameters of one FPC run.

    Field names are descriptive; :data:`CONFIG_KEYS` maps them to the short
    keys used in config files and CSV output (``N``, ``k``, ``q``, ...).
    """

    n_nodes: int
    quorum_size: int
    adversary_fraction: float = 0.0
    initial_like_fraction: float = 0.5
    first_threshold: float = 0.5
    threshold_margin: float = 0.3
    finalization_streak: int = 8
    max_rounds: int = 100
    mana_weighting: bool = False
    adversary_strategy: AdversaryStrategy = AdversaryStrategy.INVERSE_MAJORITY
    seed: int = 0
    # per-node consensus mana; None means equal mana
    mana: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "adversary_strategy", AdversaryStrategy(self.adversary_strategy))
        if self.mana is not None:
            object.__setattr__(self, "mana", tuple(float(m) for m in self.mana))
        self.check()

    def check(self) -> None:
        if self.n_nodes < 2:
            raise InvariantViolation("N", "N ≥ 2")
        if not 1 <= self.quorum_size <= self.n_nodes - 1:
            raise InvariantViolation("k", "k ≤ N−1")
        if not 0.0 <= self.adversary_fraction <= 0.5:
            raise InvariantViolation("q", "q ∈ [0, 0.5]")
        if not 0.0 <= self.initial_like_fraction <= 1.0:
            raise InvariantViolation("p0", "p0 ∈ [0, 1]")
        if not 0.0 < self.first_threshold < 1.0:
            raise InvariantViolation("tau", "tau ∈ (0, 1)")
        if not 0.0 < self.threshold_margin < 0.5:
            raise InvariantViolation("beta", "beta ∈ (0, 0.5)")
        if self.finalization_streak < 1:
            raise InvariantViolation("l", "l ≥ 1")
        if self.max_rounds < self.finalization_streak:
            raise InvariantViolation("M", "M ≥ l")
        if not 0 <= self.seed < 2**64:
            raise InvariantViolation("seed", "seed is a 64-bit unsigned integer")
        if self.mana is not None:
            if len(self.mana) != self.n_nodes:
                raise InvariantViolation("mana", "one mana value per node")
            if any(not math.isfinite(m) or m < 0 for m in self.mana) or sum(self.mana) <= 0:
                raise InvariantViolation("mana", "finite, non-negative, positive total")
        if self.honest_count < 1:
            raise InvariantViolation("q", "at least one honest node")

    @property
    def adversary_count(self) -> int:
        return math.floor(self.adversary_fraction * self.n_nodes + _EPS)

    @property
    def honest_count(self) -> int:
        return self.n_nodes - self.adversary_count


CONFIG_KEYS = {
    "N": "n_nodes",
    "k": "quorum_size",
    "q": "adversary_fraction",
    "p0": "initial_like_fraction",
    "tau": "first_threshold",
    "beta": "threshold_margin",
    "l": "finalization_streak",
    "M": "max_rounds",
    "manaWeighting": "mana_weighting",
    "adversaryStrategy": "adversary_strategy",
    "seed": "seed",
    "mana": "mana",
}


@dataclass
class VoterState:
    node_id: int
    honest: bool
    opinion: Opinion
    unchanged_streak: int = 0
    finalized: bool = False
    termination_round: int | None = None


class VoterStates:
    """Structure-of-arrays view over all voters of a run."""

    def __init__(self, opinions, honest):
        self.opinion = np.asarray(opinions, dtype=np.int8).copy()
        self.honest = np.asarray(honest, dtype=bool).copy()
        n = len(self.opinion)
        self.streak = np.zeros(n, dtype=np.int64)
        self.finalized = np.zeros(n, dtype=bool)
        self.termination_round = np.full(n, -1, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.opinion)

    def node(self, i: int) -> VoterState:
        term = int(self.termination_round[i])
        return VoterState(
            node_id=i,
            honest=bool(self.honest[i]),
            opinion=Opinion(int(self.opinion[i])),
            unchanged_streak=int(self.streak[i]),
            finalized=bool(self.finalized[i]),
            termination_round=term if term >= 0 else None,
        )

    def all_honest_finalized(self) -> bool:
        return bool(self.finalized[self.honest].all())


@dataclass
class QuorumStats:
    """Counts of quorums drawn by honest, still-voting nodes."""

    quorums: int = 0
    adversary_free: int = 0

    @property
    def adversary_free_fraction(self) -> float:
        return self.adversary_free / self.quorums if self.quorums else float("nan")


@dataclass(frozen=True)
class NodeResult:
    opinion: Opinion
    termination_round: int | None
    honest: bool


@dataclass(frozen=True)
class FpcOutcome:
    nodes: tuple[NodeResult, ...]
    agreed: bool
    majority_opinion: Opinion | None
    rounds_run: int
    max_rounds: int
    quorum_stats: QuorumStats = field(default_factory=QuorumStats)

    @property
    def all_finalized(self) -> bool:
        return all(n.termination_round is not None for n in self.nodes if n.honest)

    @property
    def mean_termination_round(self) -> float:
        """Mean over honest nodes; nodes that never finalized count as M."""
        rounds = [
            n.termination_round if n.termination_round is not None else self.max_rounds
            for n in self.nodes
            if n.honest
        ]
        return sum(rounds) / len(rounds)


def synthetic_initial_opinions(honest_count: int, like_fraction: float, rng: Xoshiro256) -> list[Opinion]:
    """Exactly ``ceil(p0 * honest_count)`` Like opinions at shuffled positions."""
    likes = math.ceil(like_fraction * honest_count - _EPS)
    opinions = [Opinion.LIKE] * likes + [Opinion.DISLIKE] * (honest_count - likes)
    rng.shuffle(opinions)
    return opinions


def first_seen_opinions(arrivals: Mapping[object, Mapping[object, float]]) -> dict[object, dict[object, Opinion]]:
    """Per node, Like the conflict member received first and Dislike the rest.

    ``arrivals[node][member]`` is the time ``node`` received ``member``.
    Ties on time are broken by member order in the mapping.
    """
    result = {}
    for node, seen in arrivals.items():
        if not seen:
            result[node] = {}
            continue
        first = min(seen, key=lambda m: seen[m])
        result[node] = {m: (Opinion.LIKE if m == first else Opinion.DISLIKE) for m in seen}
    return result


def drng_threshold(round_no: int, seed: int, margin: float) -> float:
    """Common random threshold for ``round_no`` ≥ 2, uniform on [margin, 1 − margin]."""
    if round_no < 2:
        raise ValueError("round 1 uses the fixed first threshold")
    return Xoshiro256.child(seed, "drng", round_no).uniform(margin, 1.0 - margin)


def round_threshold(round_no: int, config: FpcConfig) -> float:
    if round_no == 1:
        return config.first_threshold
    return drng_threshold(round_no, config.seed, config.threshold_margin)


def _sample_uniform(bank: StreamBank, n: int, k: int) -> np.ndarray:
    """``k`` distinct responders per querier, excluding the querier itself."""
    others = n - 1
    if k == others:
        picks = np.broadcast_to(np.arange(others), (n, others)).copy()
    else:
        # Floyd's algorithm, vectorized across queriers
        picks = np.empty((n, k), dtype=np.int64)
        for col, j in enumerate(range(others - k, others)):
            t = bank.randbelow(j + 1)
            dup = (picks[:, :col] == t[:, None]).any(axis=1)
            picks[:, col] = np.where(dup, j, t)
    selves = np.arange(n)[:, None]
    return picks + (picks >= selves)


def _sample_by_mana(bank: StreamBank, weights: np.ndarray, k: int) -> np.ndarray:
    """``k`` responders per querier with replacement, proportional to mana, excluding self."""
    n = len(weights)
    cum = np.cumsum(weights)
    total = cum[-1]
    own = weights
    before = cum - own
    avail = total - own
    picks = np.empty((n, k), dtype=np.int64)
    fallback = avail <= 0
    for col in range(k):
        u = bank.random()
        x = u * avail
        x = x + np.where(x >= before, own, 0.0)
        idx = np.minimum(np.searchsorted(cum, x, side="right"), n - 1)
        if fallback.any():
            alt = np.minimum((u * (n - 1)).astype(np.int64), n - 2)
            alt = alt + (alt >= np.arange(n))
            idx = np.where(fallback, alt, idx)
        picks[:, col] = idx
    return picks


def _adversary_answers(states: VoterStates, config: FpcConfig, bank: StreamBank, k: int) -> np.ndarray:
    """Answer each adversary gives to each (querier, quorum slot)."""
    n = len(states)
    strategy = config.adversary_strategy
    if strategy is AdversaryStrategy.FIXED_LIKE:
        return np.ones((n, k), dtype=np.int8)
    if strategy is AdversaryStrategy.FIXED_DISLIKE:
        return np.zeros((n, k), dtype=np.int8)
    if strategy is AdversaryStrategy.RANDOM_OPINION:
        coins = np.empty((n, k), dtype=np.int8)
        for col in range(k):
            coins[:, col] = (bank.next_u64() >> np.uint64(63)).astype(np.int8)
        return coins
    honest_ops = states.opinion[states.honest]
    likes = int(honest_ops.sum())
    dislikes = len(honest_ops) - likes
    # an even split counts Like as the majority
    answer = 1 if likes < dislikes else 0
    return np.full((n, k), answer, dtype=np.int8)


def quorum_eta(answers: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Per-row share of Like answers, mana-weighted when ``weights`` is given.

    Rows whose responders all hold zero mana fall back to the plain share.
    """
    answers = np.asarray(answers)
    if weights is None:
        return answers.mean(axis=1)
    w = np.asarray(weights, dtype=np.float64)
    wsum = w.sum(axis=1)
    safe = np.where(wsum > 0, wsum, 1.0)
    return np.where(wsum > 0, (w * answers).sum(axis=1) / safe, answers.mean(axis=1))


def fpc_round(
    states: VoterStates,
    config: FpcConfig,
    round_no: int,
    mana: np.ndarray | None,
    bank: StreamBank,
    stats: QuorumStats | None = None,
) -> VoterStates:
    """Run one synchronous voting round in place and return ``states``."""
    if round_no < 1:
        raise ValueError("rounds start at 1")
    n = config.n_nodes
    k = config.quorum_size
    weights = np.ones(n) if mana is None else np.asarray(mana, dtype=np.float64)
    weighted = config.mana_weighting and mana is not None

    if weighted:
        if not (weights > 0).any():
            raise QuorumInfeasible("no node holds consensus mana")
        picks = _sample_by_mana(bank, weights, k)
    else:
        if k > n - 1:
            raise QuorumInfeasible(f"quorum size {k} exceeds {n - 1} available responders")
        picks = _sample_uniform(bank, n, k)

    adversarial = ~states.honest[picks]
    answers = np.where(adversarial, _adversary_answers(states, config, bank, k), states.opinion[picks])

    eta = quorum_eta(answers, weights[picks] if weighted else None)

    threshold = round_threshold(round_no, config)
    active = states.honest & ~states.finalized
    new = (eta > threshold).astype(np.int8)
    changed = active & (new != states.opinion)
    unchanged = active & ~changed

    if stats is not None:
        stats.quorums += int(active.sum())
        stats.adversary_free += int((active & ~adversarial.any(axis=1)).sum())

    states.opinion = np.where(active, new, states.opinion).astype(np.int8)
    states.streak = np.where(changed, 0, np.where(unchanged, states.streak + 1, states.streak))
    done = active & (states.streak >= config.finalization_streak)
    states.finalized = states.finalized | done
    states.termination_round = np.where(done, round_no, states.termination_round)
    return states


def initial_states(config: FpcConfig) -> VoterStates:
    n = config.n_nodes
    order = list(range(n))
    Xoshiro256.child(config.seed, "adversaries").shuffle(order)
    honest = np.ones(n, dtype=bool)
    honest[order[: config.adversary_count]] = False
    honest_ids = [i for i in range(n) if honest[i]]
    init = synthetic_initial_opinions(
        len(honest_ids), config.initial_like_fraction, Xoshiro256.child(config.seed, "initial")
    )
    opinions = np.zeros(n, dtype=np.int8)
    opinions[honest_ids] = init
    return VoterStates(opinions, honest)


def run_fpc(config: FpcConfig) -> FpcOutcome:
    """Run rounds until every honest node has finalized or ``M`` rounds elapse."""
    states = initial_states(config)
    bank = StreamBank.for_nodes(derive_seed(config.seed, "query"), config.n_nodes)
    mana = np.asarray(config.mana, dtype=np.float64) if config.mana is not None else np.ones(config.n_nodes)
    stats = QuorumStats()
    rounds_run = 0
    for round_no in range(1, config.max_rounds + 1):
        if states.all_honest_finalized():
            break
        fpc_round(states, config, round_no, mana, bank, stats)
        rounds_run = round_no

    nodes = tuple(
        NodeResult(
            opinion=Opinion(int(states.opinion[i])),
            termination_round=int(states.termination_round[i]) if states.termination_round[i] >= 0 else None,
            honest=bool(states.honest[i]),
        )
        for i in range(config.n_nodes)
    )
    honest_ops = states.opinion[states.honest]
    likes = int(honest_ops.sum())
    dislikes = len(honest_ops) - likes
    majority = Opinion.LIKE if likes > dislikes else Opinion.DISLIKE if dislikes > likes else None
    agreed = states.all_honest_finalized() and (likes == 0 or dislikes == 0)
    return FpcOutcome(
        nodes=nodes,
        agreed=agreed,
        majority_opinion=majority,
        rounds_run=rounds_run,
        max_rounds=config.max_rounds,
        quorum_stats=stats,
    )
