"""Result rows shared by FPC experiments and tangle scenarios."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ConflictOutcome:
    winner: str  # hex transaction id
    rejected_payloads: tuple[str, ...]
    remerged_count: int


@dataclass(frozen=True)
class MetricsRow:
    """Unmeasured fields stay None and are written as ``null``, never 0."""

    tps: float | None = None
    mean_confirmation_time: float | None = None
    orphan_rate: float | None = None
    agreement_rate: float | None = None
    mean_termination_round: float | None = None
    not_finalized_rate: float | None = None
    conflict_outcomes: tuple[ConflictOutcome, ...] | None = None
    attached: int | None = None
    confirmed: int | None = None

    @property
    def conflicts_resolved(self) -> int | None:
        return None if self.conflict_outcomes is None else len(self.conflict_outcomes)


def format_value(value) -> str:
    """Locale-independent CSV cell."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
