"""Repeated FPC runs and parameter sweeps over (N, k, q)."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .errors import InfeasibleGridPoint, InvariantViolation
from .fpc import FpcConfig, run_fpc
from .metrics import MetricsRow

FULL_QUORUM = "N-1"


def run_fpc_experiment(config: FpcConfig, runs: int) -> MetricsRow:
    """Run seeds ``seed .. seed+runs-1`` and aggregate.

    A run counts as agreed only if every honest node finalized on the same
    opinion; ``not_finalized_rate`` is the share of runs where some honest
    node hit ``M`` rounds, so integrity failures are ``1 - agreement - that``.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    agreed = 0
    unfinished = 0
    rounds = 0.0
    for i in range(runs):
        outcome = run_fpc(dataclasses.replace(config, seed=(config.seed + i) % 2**64))
        agreed += outcome.agreed
        unfinished += not outcome.all_finalized
        rounds += outcome.mean_termination_round
    return MetricsRow(
        agreement_rate=agreed / runs,
        mean_termination_round=rounds / runs,
        not_finalized_rate=unfinished / runs,
    )


@dataclass(frozen=True)
class GridPoint:
    n_nodes: int
    quorum_size: int
    adversary_fraction: float


@dataclass(frozen=True)
class SweepRow:
    point: GridPoint
    config: FpcConfig | None
    runs: int
    metrics: MetricsRow | None
    error: str | None = None


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian product, iterated N-major then k then q.

    ``quorum_sizes`` may contain the string ``"N-1"``, resolved per N.
    """

    n_values: tuple[int, ...]
    quorum_sizes: tuple[int | str, ...]
    adversary_fractions: tuple[float, ...]

    def points(self) -> list[GridPoint]:
        out = []
        for n in self.n_values:
            for k in self.quorum_sizes:
                kk = n - 1 if k == FULL_QUORUM else int(k)
                for q in self.adversary_fractions:
                    out.append(GridPoint(n, kk, q))
        return out


DEFAULT_GRIDS = {
    "N": SweepGrid((100, 200, 500, 1000), (20,), (0.1,)),
    "k": SweepGrid((100,), (5, 10, 20, 50, FULL_QUORUM), (0.3,)),
    "q": SweepGrid((100,), (99,), (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)),
}


def default_grid_points() -> list[GridPoint]:
    return [p for grid in DEFAULT_GRIDS.values() for p in grid.points()]


def _run_point(args: tuple[GridPoint, FpcConfig, int]) -> SweepRow:
    point, base, runs = args
    if point.quorum_size >= point.n_nodes:
        err = InfeasibleGridPoint(f"k={point.quorum_size} must be below N={point.n_nodes}")
        return SweepRow(point, None, runs, None, str(err))
    try:
        config = dataclasses.replace(
            base,
            n_nodes=point.n_nodes,
            quorum_size=point.quorum_size,
            adversary_fraction=point.adversary_fraction,
        )
    except InvariantViolation as exc:
        return SweepRow(point, None, runs, None, str(InfeasibleGridPoint(str(exc))))
    return SweepRow(point, config, runs, run_fpc_experiment(config, runs))


def run_fpc_sweep(points: Sequence[GridPoint], base: FpcConfig, runs: int, jobs: int = 1) -> list[SweepRow]:
    """One row per grid point, in grid order whatever ``jobs`` is."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    tasks = [(p, base, runs) for p in points]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_point(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_point, tasks))
