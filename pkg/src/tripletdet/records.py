"""Geometry and annotation records.

All internal geometry is ``xyxy`` in image pixels; the ``xywh`` form only
exists at the JSON boundary (see :mod:`tripletdet.io`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import ContractError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its top-left and bottom-right corners."""

    tl_x: float
    tl_y: float
    br_x: float
    br_y: float

    @property
    def width(self) -> float:
        return self.br_x - self.tl_x

    @property
    def height(self) -> float:
        return self.br_y - self.tl_y

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.tl_x + self.br_x) / 2.0, (self.tl_y + self.br_y) / 2.0)

    def is_valid(self) -> bool:
        return self.tl_x < self.br_x and self.tl_y < self.br_y

    def validate(self) -> "Box":
        if not self.is_valid():
            raise ContractError(f"invalid box {self}: need tl_x < br_x and tl_y < br_y")
        return self

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tl_x, self.tl_y, self.br_x, self.br_y)

    def sort_key(self) -> tuple[float, float, float, float]:
        # row-major: y before x
        return (self.tl_y, self.tl_x, self.br_y, self.br_x)

    def contains(self, x: float, y: float) -> bool:
        """Boundary-inclusive point test."""
        return self.tl_x <= x <= self.br_x and self.tl_y <= y <= self.br_y


@dataclass(frozen=True)
class LevelSpec:
    level_id: str
    stride: int

    def __post_init__(self):
        if self.stride < 1:
            raise ContractError(f"level {self.level_id}: stride must be >= 1, got {self.stride}")


def validate_levels(levels) -> list[LevelSpec]:
    levels = list(levels)
    for a, b in zip(levels, levels[1:]):
        if b.stride <= a.stride:
            raise ContractError(
                f"level strides must strictly increase: {a.level_id}={a.stride}, {b.level_id}={b.stride}"
            )
    return levels


DEFAULT_LEVELS = (
    LevelSpec("P3", 8),
    LevelSpec("P4", 16),
    LevelSpec("P5", 32),
    LevelSpec("P6", 64),
    LevelSpec("P7", 128),
)


@dataclass(frozen=True)
class Keypoint:
    """A decoded heatmap peak or regressed point.

    ``x``/``y`` are cell columns/rows straight out of peak extraction and
    image pixels once offsets were applied. ``index`` is the row-major cell
    index ``i * W + j`` of the originating heatmap cell, used for
    deterministic tie-breaking; -1 for points that never came from a heatmap.
    """

    class_id: int
    x: float
    y: float
    score: float
    embedding: Optional[float] = None
    index: int = -1


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    box: Box


@dataclass(frozen=True)
class Detection:
    image_id: int
    class_id: int
    box: Box
    score: float

    def sort_key(self):
        """Score descending, then row-major geometry."""
        return (-self.score, self.class_id) + self.box.sort_key()


@dataclass
class CandidateBox:
    class_id: int
    box: Box
    score: float
    tl_source: Keypoint
    br_source: Keypoint
    center_sources: tuple = field(default_factory=tuple)

    def to_detection(self, image_id: int) -> Detection:
        return Detection(image_id, self.class_id, self.box, self.score)
