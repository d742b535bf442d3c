"""Deterministic random streams: xoshiro256** seeded through splitmix64.

Every run owns one root seed. Independent sub-streams (one per node, one
for the shared threshold generator, ...) are split off with
:func:`derive_seed`, so adding a consumer never perturbs the draws seen by
the others.

Two front ends share the same generator:

* :class:`Xoshiro256` steps a single stream with Python integers; used by
  the event-driven tangle scenarios.
* :class:`StreamBank` steps many streams at once on numpy ``uint64``
  arrays; used by the FPC rounds where every node draws in lock step.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _label_word(label: int | str) -> int:
    if isinstance(label, int):
        return label & MASK64
    digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *labels: int | str) -> int:
    """Split a child seed off ``seed`` along a path of labels."""
    x = seed & MASK64
    for label in labels:
        _, mixed = splitmix64(_label_word(label))
        _, x = splitmix64(x ^ mixed)
    return x


def _expand_seed(seed: int) -> list[int]:
    state = seed & MASK64
    words = []
    for _ in range(4):
        state, out = splitmix64(state)
        words.append(out)
    return words


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """Scalar xoshiro256** stream."""

    __slots__ = ("_s",)

    def __init__(self, seed: int = 0, *, state: list[int] | None = None):
        self._s = list(state) if state is not None else _expand_seed(seed)
        if not any(self._s):
            raise ValueError("xoshiro256** state must not be all zero")

    @classmethod
    def child(cls, seed: int, *labels: int | str) -> Xoshiro256:
        return cls(derive_seed(seed, *labels))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift on a 53-bit uniform."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.random()) / rate

    def geometric(self, p: float) -> int:
        """Number of Bernoulli(p) trials up to and including the first success."""
        if p >= 1.0:
            return 1
        u = self.random()
        return int(math.floor(math.log1p(-u) / math.log1p(-p))) + 1

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, population: list, k: int) -> list:
        """``k`` distinct elements, uniformly, without replacement."""
        if k > len(population):
            raise ValueError("sample larger than population")
        pool = list(population)
        out = []
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out

    def choice(self, items):
        return items[self.randbelow(len(items))]

    def getstate(self) -> tuple[int, ...]:
        return tuple(self._s)


_U11 = np.uint64(11)
_U17 = np.uint64(17)
_FIVE = np.uint64(5)
_NINE = np.uint64(9)


def _vrotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class StreamBank:
    """A bank of independent xoshiro256** streams stepped together.

    Stream ``i`` produces exactly the sequence of ``Xoshiro256(seeds[i])``.
    """

    def __init__(self, seeds):
        words = np.array([_expand_seed(int(s)) for s in seeds], dtype=np.uint64)
        if words.size == 0:
            words = words.reshape(0, 4)
        self._s = [words[:, j].copy() for j in range(4)]

    @classmethod
    def for_nodes(cls, seed: int, count: int, *labels: int | str) -> StreamBank:
        return cls([derive_seed(seed, *labels, i) for i in range(count)])

    def __len__(self) -> int:
        return len(self._s[0])

    def next_u64(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = _vrotl(s1 * _FIVE, 7) * _NINE
        t = s1 << _U17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _vrotl(s3, 45)
        return result

    def random(self) -> np.ndarray:
        return (self.next_u64() >> _U11).astype(np.float64) * _INV_2_53

    def randbelow(self, n) -> np.ndarray:
        """Per-stream integers in [0, n); ``n`` may be a scalar or an array."""
        n = np.asarray(n)
        return np.minimum((self.random() * n).astype(np.int64), n - 1)
