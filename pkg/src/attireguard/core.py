"""Geometry and identity types shared by the whole engine.

Boxes are stored in center format ``(cx, cy, w, h)``; corner format is only
used internally for overlap arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import BoxOutsideFrame, InvariantViolation, VocabularyViolation


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantViolation(f"non-finite box {vals}")
        if not (self.w > 0 and self.h > 0):
            raise InvariantViolation(f"box must have positive extent, got w={self.w} h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def corners(self) -> tuple[float, float, float, float]:
        hw, hh = self.w / 2.0, self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def scale(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(self.cx * sx, self.cy * sy, self.w * sx, self.h * sy)


@dataclass(frozen=True, order=True)
class ClassLabel:
    id: int
    name: str


class Vocabulary:
    """Ordered, closed set of class names; ids are positions."""

    def __init__(self, names: Iterable[str]):
        self.names = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise InvariantViolation(f"duplicate class names in {self.names}")
        self._by_name = {n: ClassLabel(i, n) for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self._by_name.values())

    def __contains__(self, item) -> bool:
        if isinstance(item, ClassLabel):
            return self._by_name.get(item.name) == item
        return item in self._by_name

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and other.names == self.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"Vocabulary({list(self.names)!r})"

    def label(self, name: str) -> ClassLabel:
        try:
            return self._by_name[name]
        except KeyError:
            raise VocabularyViolation(f"class {name!r} not in vocabulary {list(self.names)}") from None

    def by_id(self, class_id: int) -> ClassLabel:
        if not 0 <= class_id < len(self.names):
            raise VocabularyViolation(f"class id {class_id} outside vocabulary of size {len(self.names)}")
        return ClassLabel(class_id, self.names[class_id])


PERSON_VOCAB = Vocabulary(["Person"])
ATTIRE_VOCAB = Vocabulary(["Jacket", "T-Shirt", "Shorts", "Skirt", "Top"])


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    label: ClassLabel
    score: float
    class_probs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvariantViolation(f"score {self.score} outside [0, 1]")
        if self.class_probs is not None and abs(math.fsum(self.class_probs) - 1.0) > 1e-9:
            raise InvariantViolation("class_probs must sum to 1")

    def translate(self, dx: float, dy: float) -> "Detection":
        return Detection(self.bbox.translate(dx, dy), self.label, self.score, self.class_probs)


@dataclass(frozen=True)
class FrameRef:
    frame_id: int
    width: int
    height: int
    zone_id: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvariantViolation(f"frame {self.frame_id}: size must be positive")


@dataclass(frozen=True)
class ZonePolicy:
    zone_id: str
    authorized: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "authorized", frozenset(self.authorized))
        for lab in self.authorized:
            if lab not in ATTIRE_VOCAB:
                raise InvariantViolation(f"zone {self.zone_id!r}: {lab} is not an attire class")

    @classmethod
    def from_names(cls, zone_id: str, names: Sequence[str]) -> "ZonePolicy":
        return cls(zone_id, frozenset(ATTIRE_VOCAB.label(n) for n in names))

    def allows(self, label: ClassLabel) -> bool:
        return label in self.authorized


def bbox_area(b: BoundingBox) -> float:
    return b.w * b.h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; boxes touching only along an edge give 0."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    if a == b:
        return 1.0
    inter = iw * ih
    union = bbox_area(a) + bbox_area(b) - inter
    return min(1.0, inter / union)


def clip_to_frame(b: BoundingBox, frame: FrameRef) -> BoundingBox:
    x1, y1, x2, y2 = b.corners()
    x1, x2 = max(x1, 0.0), min(x2, float(frame.width))
    y1, y2 = max(y1, 0.0), min(y2, float(frame.height))
    if x2 <= x1 or y2 <= y1:
        raise BoxOutsideFrame(f"box {b} has no overlap with frame {frame.frame_id} ({frame.width}x{frame.height})")
    if (x1, y1, x2, y2) == b.corners():
        return b
    return BoundingBox.from_corners(x1, y1, x2, y2)
