"""Curriculum stage tables and the stage-transfer gate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .engagement import Outcome

DISTANCE_MIN = 50_000.0
DISTANCE_MAX = 150_000.0
DISTANCE_STEP = 10_000.0
N_STAGES = 10


class CurriculumKind(Enum):
    ANGLE = "angle"
    DISTANCE = "distance"
    HYBRID = "hybrid"
    NONE = "none"

    @property
    def abbrev(self) -> str:
        return {"angle": "AC", "distance": "DC", "hybrid": "HC", "none": "NC"}[self.value]

    @classmethod
    def parse(cls, name: str) -> "CurriculumKind":
        key = name.strip().lower()
        for kind in cls:
            if key in (kind.value, kind.abbrev.lower()):
                return kind
        raise ValueError(f"unknown curriculum {name!r}; expected one of angle, distance, hybrid, none")


@dataclass(frozen=True)
class CurriculumStage:
    kind: CurriculumKind
    index: int
    azimuth_half_width: float
    distance_interval: tuple[float, float]

    @property
    def is_last(self) -> bool:
        return self.index == num_stages(self.kind) - 1


@dataclass(frozen=True)
class TransferGate:
    eval_episodes: int = 50
    decisive_threshold: float = 0.6

    def __post_init__(self):
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        if not 0 < self.decisive_threshold <= 1:
            raise ValueError("decisive_threshold must lie in (0, 1]")


def num_stages(kind: CurriculumKind) -> int:
    return 1 if kind is CurriculumKind.NONE else N_STAGES


def stage(kind: CurriculumKind, index: int) -> CurriculumStage:
    """Sampling region of stage ``index`` for the given curriculum."""
    if not 0 <= index < num_stages(kind):
        raise IndexError(f"stage index {index} out of range for {kind.value} curriculum")
    k = index + 1
    angle = k * math.pi / 10
    near = (DISTANCE_MIN, DISTANCE_MIN + DISTANCE_STEP * k)
    full = (DISTANCE_MIN, DISTANCE_MAX)
    if kind is CurriculumKind.ANGLE:
        return CurriculumStage(kind, index, angle, full)
    if kind is CurriculumKind.DISTANCE:
        return CurriculumStage(kind, index, math.pi, near)
    if kind is CurriculumKind.HYBRID:
        return CurriculumStage(kind, index, angle, near)
    return CurriculumStage(kind, index, math.pi, full)


def decisive_fraction(results) -> float:
    results = list(results)
    if not results:
        return 0.0
    return sum(Outcome(r) is not Outcome.DRAW for r in results) / len(results)


def should_advance(gate: TransferGate, eval_results, current: CurriculumStage) -> bool:
    """True when enough evaluation episodes ended decisively and a harder stage exists."""
    results = list(eval_results)
    if len(results) != gate.eval_episodes:
        raise ValueError(f"expected {gate.eval_episodes} evaluation results, got {len(results)}")
    if current.is_last:
        return False
    return decisive_fraction(results) >= gate.decisive_threshold
