"""Per-iteration records emitted by the iterative fits."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    deltas: dict[str, float] = field(default_factory=dict)


def max_delta(row: TraceRow) -> float:
    return max(row.deltas.values(), default=0.0)


def check_increasing(trace: list[TraceRow]) -> None:
    its = [r.iteration for r in trace]
    if its != list(range(1, len(its) + 1)):
        raise ValueError(f"trace iterations must run 1..n, got {its[:5]}...")
