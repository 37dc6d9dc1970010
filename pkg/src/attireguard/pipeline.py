"""Person -> crop -> attire cascade.

A frame first goes through the person stage. Each person box is clipped to
the frame, cropped on integer pixel boundaries, and the attire stage runs on
the crop; attire boxes come back crop-local and are shifted into frame
coordinates. No person means the attire stage is never invoked.

Detector stages are file-backed:

* :class:`TensorFileBackend` decodes ``<frame_id>.ygt`` (person stage) or
  ``<frame_id>_<person_index>.ygt`` (attire stage, one tensor per crop);
* :class:`ScriptedBackend` replays an annotation file of
  ``frame_id,class_name,cx,cy,w,h,score`` lines given in frame pixels.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .augment import RgbImage
from .core import ATTIRE_VOCAB, PERSON_VOCAB, BoundingBox, Detection, FrameRef, Vocabulary, clip_to_frame
from .decode import DEFAULT_CONF_FLOOR, DEFAULT_NMS_IOU, decode_grid, nms, read_tensor
from .errors import BoxOutsideFrame, DegenerateCrop, InvariantViolation, MissingFrameData, ParseError, VocabularyViolation


@dataclass(frozen=True)
class DecodeParams:
    conf_floor: float = DEFAULT_CONF_FLOOR
    nms_iou: float = DEFAULT_NMS_IOU

    def __post_init__(self):
        if not (0.0 <= self.conf_floor <= 1.0 and 0.0 <= self.nms_iou <= 1.0):
            raise InvariantViolation(f"decode params must lie in [0, 1]: {self}")


@dataclass(frozen=True)
class CropRegion:
    """Integer pixel rectangle ``[x0, x1) x [y0, y1)`` of a person crop."""

    index: int
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def offset(self) -> tuple[int, int]:
        return (self.x0, self.y0)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def crop_region(box: BoundingBox, index: int = 0) -> CropRegion:
    x1, y1, x2, y2 = box.corners()
    r = CropRegion(index, round_half_away(x1), round_half_away(y1), round_half_away(x2), round_half_away(y2))
    if r.width <= 0 or r.height <= 0:
        raise DegenerateCrop(f"box {box} rounds to an empty crop")
    return r


def crop(frame_image: RgbImage, box: BoundingBox) -> tuple[RgbImage, tuple[int, int]]:
    r = crop_region(box)
    if r.x0 < 0 or r.y0 < 0 or r.x1 > frame_image.width or r.y1 > frame_image.height:
        raise DegenerateCrop(f"crop {r} exceeds the {frame_image.width}x{frame_image.height} image; clip first")
    return RgbImage(r.width, r.height, frame_image.pixels[r.y0 : r.y1, r.x0 : r.x1]), r.offset


# -- annotation files ----------------------------------------------------------


@dataclass(frozen=True)
class ScriptedBox:
    frame_id: int
    class_name: str
    bbox: BoundingBox
    score: float


def parse_annotation_lines(lines, source="<annotations>") -> list[ScriptedBox]:
    out = []
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 7:
            raise ParseError(f"expected 7 comma-separated fields, got {len(parts)}", source=source, line=lineno)
        try:
            frame_id = int(parts[0])
            cx, cy, w, h, score = (float(p) for p in parts[2:])
            bbox = BoundingBox(cx, cy, w, h)
        except (ValueError, InvariantViolation) as exc:
            raise ParseError(str(exc), source=source, line=lineno) from None
        if not 0.0 <= score <= 1.0:
            raise ParseError(f"score {score} outside [0, 1]", source=source, line=lineno, field="score")
        out.append(ScriptedBox(frame_id, parts[1], bbox, score))
    return out


def read_annotations(path: Union[str, Path]) -> list[ScriptedBox]:
    with open(path) as fh:
        return parse_annotation_lines(fh, source=path)


def format_annotation(frame_id: int, det: Detection) -> str:
    b = det.bbox
    return f"{frame_id},{det.label.name},{b.cx!r},{b.cy!r},{b.w!r},{b.h!r},{det.score!r}"


def split_by_stage(records: list[ScriptedBox]) -> tuple[list[ScriptedBox], list[ScriptedBox]]:
    """Partition one annotation script into (person, attire) records."""
    persons, attire = [], []
    for r in records:
        if r.class_name in PERSON_VOCAB:
            persons.append(r)
        elif r.class_name in ATTIRE_VOCAB:
            attire.append(r)
        else:
            raise VocabularyViolation(f"frame {r.frame_id}: unknown class {r.class_name!r}")
    return persons, attire


# -- backends ------------------------------------------------------------------


class ScriptedBackend:
    """Replays scripted detections; every label must belong to ``vocabulary``."""

    kind = "annotation-script"

    def __init__(self, records, vocabulary: Vocabulary):
        self.vocabulary = vocabulary
        self.calls = 0
        self._by_frame = defaultdict(list)
        for r in records:
            self._by_frame[r.frame_id].append(r)

    def detect(self, frame: FrameRef, params: DecodeParams = DecodeParams(), region: Optional[CropRegion] = None) -> list[Detection]:
        self.calls += 1
        out = []
        for r in self._by_frame.get(frame.frame_id, ()):
            if r.class_name not in self.vocabulary:
                raise VocabularyViolation(
                    f"frame {frame.frame_id}: scripted class {r.class_name!r} is not in stage vocabulary {list(self.vocabulary.names)}"
                )
            det = Detection(r.bbox, self.vocabulary.label(r.class_name), r.score)
            if region is not None:
                # the stage only sees the crop: keep boxes centred inside it
                if not (region.x0 <= r.bbox.cx < region.x1 and region.y0 <= r.bbox.cy < region.y1):
                    continue
                det = det.translate(-region.x0, -region.y0)
            out.append(det)
        return out


class TensorFileBackend:
    """Decodes per-frame (or per-crop) YGT1 tensor files from a directory."""

    kind = "tensor-file"

    def __init__(self, directory: Union[str, Path], vocabulary: Vocabulary):
        self.directory = Path(directory)
        self.vocabulary = vocabulary
        self.calls = 0

    def path_for(self, frame: FrameRef, region: Optional[CropRegion] = None) -> Path:
        name = f"{frame.frame_id}.ygt" if region is None else f"{frame.frame_id}_{region.index}.ygt"
        return self.directory / name

    def detect(self, frame: FrameRef, params: DecodeParams = DecodeParams(), region: Optional[CropRegion] = None) -> list[Detection]:
        self.calls += 1
        path = self.path_for(frame, region)
        if not path.is_file():
            raise MissingFrameData(f"frame {frame.frame_id}: tensor file {path} not found")
        tensor = read_tensor(path)
        size = (frame.width, frame.height) if region is None else (region.width, region.height)
        dets = decode_grid(tensor, params.conf_floor, self.vocabulary, out_size=size)
        return nms(dets, params.nms_iou)


def detect(frame: FrameRef, backend, decode_params: DecodeParams = DecodeParams(), region: Optional[CropRegion] = None) -> list[Detection]:
    return backend.detect(frame, decode_params, region)


# -- cascade -------------------------------------------------------------------


@dataclass
class FrameResult:
    frame: FrameRef
    persons: list = field(default_factory=list)
    attire: list = field(default_factory=list)  # (person index, Detection in frame coords)
    no_person: bool = False

    def attire_for(self, person_index: int) -> list[Detection]:
        return [d for k, d in self.attire if k == person_index]


def _clip_det(det: Detection, frame: FrameRef) -> Optional[Detection]:
    try:
        box = clip_to_frame(det.bbox, frame)
    except BoxOutsideFrame:
        return None
    return det if box is det.bbox else Detection(box, det.label, det.score, det.class_probs)


def run_frame(
    frame: FrameRef,
    person_backend,
    attire_backend,
    params: DecodeParams = DecodeParams(),
    attire_params: Optional[DecodeParams] = None,
) -> FrameResult:
    attire_params = attire_params or params
    raw_persons = detect(frame, person_backend, params)
    persons = [p for p in (_clip_det(d, frame) for d in raw_persons) if p is not None]
    if not persons:
        return FrameResult(frame, [], [], no_person=True)

    attire = []
    for k, person in enumerate(persons):
        try:
            region = crop_region(person.bbox, k)
        except DegenerateCrop:
            continue
        crop_frame = FrameRef(frame.frame_id, region.width, region.height, frame.zone_id)
        for local in detect(frame, attire_backend, attire_params, region):
            clipped = _clip_det(local, crop_frame)
            if clipped is not None:
                attire.append((k, clipped.translate(region.x0, region.y0)))
    return FrameResult(frame, persons, attire)
