"""Box records shared by the dataset loaders and the detection metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


class BoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates (no +1 convention)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise BoxError(f"non-finite box coordinates {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise BoxError(f"malformed box {list(coords)}: need x2 > x1 and y2 > y1")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_seq(cls, seq) -> "BoundingBox":
        if len(seq) != 4:
            raise BoxError(f"box needs 4 numbers, got {len(seq)}")
        return cls(*(float(v) for v in seq))


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BoundingBox
    score: float
    label: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise BoxError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    box: BoundingBox
    label: str
