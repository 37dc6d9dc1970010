import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from attireguard.core import (
    ATTIRE_VOCAB,
    PERSON_VOCAB,
    BoundingBox,
    Detection,
    FrameRef,
    Vocabulary,
    ZonePolicy,
    bbox_area,
    clip_to_frame,
    iou,
)
from attireguard.errors import BoxOutsideFrame, InvariantViolation, VocabularyViolation

coord = st.floats(-200, 200, allow_nan=False)
size = st.floats(1e-2, 100, allow_nan=False)
boxes = st.builds(BoundingBox, coord, coord, size, size)


def corner_overlap(a, b):
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    return max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))


@pytest.mark.parametrize(
    "box, area",
    [(BoundingBox(1, 1, 2, 2), 4.0), (BoundingBox(0, 0, 1, 1), 1.0), (BoundingBox(5, 5, 3, 0.5), 1.5)],
)
def test_bbox_area(box, area):
    assert bbox_area(box) == area


@pytest.mark.parametrize("bad", [(0, 0, 0, 1), (0, 0, 1, -1), (math.nan, 0, 1, 1), (0, math.inf, 1, 1)])
def test_bounding_box_rejects_invalid(bad):
    with pytest.raises(InvariantViolation):
        BoundingBox(*bad)


def test_corner_roundtrip():
    b = BoundingBox.from_corners(1, 2, 5, 10)
    assert (b.cx, b.cy, b.w, b.h) == (3, 6, 4, 8)
    assert b.corners() == (1, 2, 5, 10)


def test_iou_examples():
    a = BoundingBox(5, 5, 4, 4)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(50, 50, 4, 4)) == 0.0
    p = BoundingBox.from_corners(0, 0, 2, 2)
    q = BoundingBox.from_corners(1, 1, 3, 3)
    assert iou(p, q) == pytest.approx(1 / 7, abs=1e-12)


def test_iou_edge_touching_is_zero():
    assert iou(BoundingBox.from_corners(0, 0, 1, 1), BoundingBox.from_corners(1, 0, 2, 1)) == 0.0


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert (v == 0.0) == (corner_overlap(a, b) == 0.0)


@given(boxes)
def test_iou_self_is_exactly_one(a):
    assert iou(a, a) == 1.0


def test_clip_examples():
    f = FrameRef(0, 100, 50)
    inside = BoundingBox(50, 25, 10, 10)
    assert clip_to_frame(inside, f) == inside
    half = BoundingBox(100, 25, 20, 10)
    c = clip_to_frame(half, f)
    assert c.corners() == (90, 20, 100, 30)
    with pytest.raises(BoxOutsideFrame):
        clip_to_frame(BoundingBox(200, 25, 10, 10), f)


@given(boxes, st.integers(1, 300), st.integers(1, 300))
def test_clip_never_grows(b, w, h):
    f = FrameRef(0, w, h)
    try:
        c = clip_to_frame(b, f)
    except BoxOutsideFrame:
        assert corner_overlap(b, BoundingBox.from_corners(0, 0, w, h)) == 0.0
        return
    assert bbox_area(c) <= bbox_area(b) * (1 + 1e-12)
    x1, y1, x2, y2 = c.corners()
    assert -1e-9 <= x1 and x2 <= w + 1e-9 and -1e-9 <= y1 and y2 <= h + 1e-9


def test_vocabularies():
    assert list(ATTIRE_VOCAB.names) == ["Jacket", "T-Shirt", "Shorts", "Skirt", "Top"]
    assert ATTIRE_VOCAB.label("Shorts").id == 2
    assert "Person" in PERSON_VOCAB and "Person" not in ATTIRE_VOCAB
    with pytest.raises(VocabularyViolation):
        ATTIRE_VOCAB.label("Hat")
    with pytest.raises(InvariantViolation):
        Vocabulary(["a", "a"])


def test_detection_validation():
    lab = ATTIRE_VOCAB.label("Top")
    with pytest.raises(InvariantViolation):
        Detection(BoundingBox(0, 0, 1, 1), lab, 1.2)
    with pytest.raises(InvariantViolation):
        Detection(BoundingBox(0, 0, 1, 1), lab, 0.5, (0.5, 0.4))
    d = Detection(BoundingBox(0, 0, 1, 1), lab, 0.5, (0.5, 0.5)).translate(3, 4)
    assert (d.bbox.cx, d.bbox.cy) == (3, 4)


def test_zone_policy():
    z = ZonePolicy.from_names("lab", ["Jacket"])
    assert z.allows(ATTIRE_VOCAB.label("Jacket"))
    assert not z.allows(ATTIRE_VOCAB.label("T-Shirt"))
    with pytest.raises(InvariantViolation):
        ZonePolicy("lab", {PERSON_VOCAB.label("Person")})
