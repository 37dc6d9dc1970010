"""YOLO grid decoding: raw S x S x B head outputs to scored pixel-space detections.

Raw tensors are held as a float64 array of shape ``(S, S, B, 5 + C)`` indexed
``(cell_y, cell_x, anchor, channel)`` with channels ``tx, ty, tw, th, t_obj``
followed by the class logits.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .core import BoundingBox, ClassLabel, Detection, Vocabulary
from .errors import (
    CenterOutsideCell,
    DegenerateProbability,
    EmptyVector,
    IndexOutOfGrid,
    InvariantViolation,
    ParseError,
    ShapeMismatch,
)

DEFAULT_CONF_FLOOR = 0.25
DEFAULT_NMS_IOU = 0.45

TENSOR_MAGIC = b"YGT1"


@dataclass(frozen=True)
class GridSpec:
    s: int
    num_anchors: int
    num_classes: int
    frame_width: int
    frame_height: int

    def __post_init__(self):
        if self.s < 1 or self.num_anchors < 1 or self.num_classes < 1:
            raise InvariantViolation(f"invalid grid spec {self}")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise InvariantViolation(f"invalid frame size in {self}")

    @property
    def channels(self) -> int:
        return 5 + self.num_classes

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.s, self.s, self.num_anchors, self.channels)


@dataclass(frozen=True)
class Anchor:
    pw: float
    ph: float

    def __post_init__(self):
        if not (self.pw > 0 and self.ph > 0):
            raise InvariantViolation(f"anchor dims must be positive: {self}")


@dataclass(frozen=True)
class RawCellPrediction:
    tx: float
    ty: float
    tw: float
    th: float
    t_obj: float
    class_logits: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th, self.t_obj, *self.class_logits])

    @classmethod
    def from_array(cls, v) -> "RawCellPrediction":
        v = [float(x) for x in v]
        return cls(v[0], v[1], v[2], v[3], v[4], tuple(v[5:]))


class RawGridTensor:
    """Raw head output for one frame (or crop)."""

    def __init__(self, spec: GridSpec, anchors: Sequence[Anchor], data):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if len(anchors) != spec.num_anchors:
            raise ShapeMismatch(f"{len(anchors)} anchors for num_anchors={spec.num_anchors}")
        if data.shape != spec.shape:
            raise ShapeMismatch(f"tensor shape {data.shape} does not match spec {spec.shape}")
        if not np.all(np.isfinite(data)):
            raise InvariantViolation("raw tensor contains non-finite values")
        self.spec = spec
        self.anchors = tuple(anchors)
        self.data = data

    @classmethod
    def zeros(cls, spec: GridSpec, anchors: Sequence[Anchor]) -> "RawGridTensor":
        return cls(spec, anchors, np.zeros(spec.shape))

    def anchor_array(self) -> np.ndarray:
        return np.array([[a.pw, a.ph] for a in self.anchors], dtype=np.float64)

    def cell(self, cell_x: int, cell_y: int, anchor: int) -> RawCellPrediction:
        return RawCellPrediction.from_array(self.data[cell_y, cell_x, anchor])

    def set_cell(self, cell_x: int, cell_y: int, anchor: int, raw: RawCellPrediction):
        v = raw.as_array()
        if v.shape != (self.spec.channels,):
            raise ShapeMismatch(f"cell has {v.size} channels, expected {self.spec.channels}")
        self.data[cell_y, cell_x, anchor] = v

    def copy(self) -> "RawGridTensor":
        return RawGridTensor(self.spec, self.anchors, self.data.copy())


def sigmoid(x):
    """Logistic function, stable for large |x|; accepts scalars or arrays."""
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        z = math.exp(x)
        return z / (1.0 + z)
    return kernels.pure._sigmoid(x)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def softmax(logits) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if v.size == 0:
        raise EmptyVector("softmax of an empty vector")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_cell(spec: GridSpec, cell_x: int, cell_y: int):
    if not (0 <= cell_x < spec.s and 0 <= cell_y < spec.s):
        raise IndexOutOfGrid(f"cell ({cell_x}, {cell_y}) outside {spec.s}x{spec.s} grid")


def decode_cell(raw: RawCellPrediction, spec: GridSpec, anchor: Anchor, cell_x: int, cell_y: int):
    """Return ``(box in grid units, objectness, class_probs)`` for one slot."""
    _check_cell(spec, cell_x, cell_y)
    box = BoundingBox(
        sigmoid(raw.tx) + cell_x,
        sigmoid(raw.ty) + cell_y,
        anchor.pw * math.exp(raw.tw),
        anchor.ph * math.exp(raw.th),
    )
    return box, sigmoid(raw.t_obj), softmax(raw.class_logits)


def encode_cell(
    box: BoundingBox,
    objectness: float,
    class_probs,
    spec: GridSpec,
    anchor: Anchor,
    cell_x: int,
    cell_y: int,
) -> RawCellPrediction:
    """Analytic inverse of :func:`decode_cell` (used to build fixtures)."""
    _check_cell(spec, cell_x, cell_y)
    ox, oy = box.cx - cell_x, box.cy - cell_y
    if not (0.0 < ox < 1.0 and 0.0 < oy < 1.0):
        raise CenterOutsideCell(f"center ({box.cx}, {box.cy}) not inside cell ({cell_x}, {cell_y})")
    probs = np.asarray(class_probs, dtype=np.float64)
    if not 0.0 < objectness < 1.0:
        raise DegenerateProbability(f"objectness {objectness} must be strictly inside (0, 1)")
    if probs.size == 0:
        raise EmptyVector("no class probabilities")
    if np.any(probs <= 0.0):
        raise DegenerateProbability("class probabilities must all be positive")
    return RawCellPrediction(
        logit(ox),
        logit(oy),
        math.log(box.w / anchor.pw),
        math.log(box.h / anchor.ph),
        logit(objectness),
        tuple(float(x) for x in np.log(probs)),
    )


def class_confidence(objectness: float, class_prob: float) -> float:
    return objectness * class_prob


def _labels_for(num_classes: int, vocabulary: Optional[Vocabulary]) -> Vocabulary:
    if vocabulary is None:
        return Vocabulary(f"class{i}" for i in range(num_classes))
    if len(vocabulary) != num_classes:
        raise ShapeMismatch(f"tensor has {num_classes} classes, vocabulary has {len(vocabulary)}")
    return vocabulary


def decode_grid(
    tensor: RawGridTensor,
    conf_floor: float = DEFAULT_CONF_FLOOR,
    vocabulary: Optional[Vocabulary] = None,
    out_size: Optional[tuple[float, float]] = None,
) -> list[Detection]:
    """Decode every slot to at most one pixel-space detection (argmax class).

    Boxes are scaled from grid units by ``frame_size / s``; ``out_size``
    rescales further to another target size (e.g. a crop the network input
    was resized from). Output is sorted by descending score with ties broken
    by ``(cell_y, cell_x, anchor)``.
    """
    spec = tensor.spec
    if tensor.data.shape != spec.shape:
        raise ShapeMismatch(f"tensor shape {tensor.data.shape} does not match spec {spec.shape}")
    vocab = _labels_for(spec.num_classes, vocabulary)
    slots, cls, scores, _, boxes, probs = kernels.decode_candidates(tensor.data, tensor.anchor_array(), float(conf_floor))
    order = np.argsort(-scores, kind="stable")

    sx = spec.frame_width / spec.s
    sy = spec.frame_height / spec.s
    if out_size is not None:
        sx *= out_size[0] / spec.frame_width
        sy *= out_size[1] / spec.frame_height
    labels = list(vocab)
    dets = []
    for i in order:
        bx, by, bw, bh = boxes[i]
        dets.append(
            Detection(
                BoundingBox(bx * sx, by * sy, bw * sx, bh * sy),
                labels[cls[i]],
                min(1.0, float(scores[i])),
                tuple(probs[i].tolist()),
            )
        )
    return dets


def nms(dets: Sequence[Detection], iou_thresh: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy per-class non-maximum suppression.

    Detections are visited by descending score (stable, so equal scores keep
    their input order); a detection survives unless a survivor of the same
    class overlaps it with IOU strictly above ``iou_thresh``.
    """
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    boxes = np.array([[d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h] for d in (dets[i] for i in order)], dtype=np.float64)
    class_ids = np.array([dets[i].label.id for i in order], dtype=np.int64)
    keep = kernels.greedy_nms(boxes, class_ids, float(iou_thresh))
    return [dets[order[k]] for k in keep]


# -- YGT1 tensor files -------------------------------------------------------

_HEADER = struct.Struct("<4s5I")


def write_tensor(path: Union[str, Path], tensor: RawGridTensor):
    spec = tensor.spec
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, spec.s, spec.num_anchors, spec.num_classes, spec.frame_width, spec.frame_height))
        fh.write(tensor.anchor_array().astype("<f4").tobytes())
        fh.write(tensor.data.astype("<f4").tobytes())


def read_tensor(path: Union[str, Path]) -> RawGridTensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated tensor header", source=path)
    magic, s, nb, nc, fw, fh = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise ParseError(f"bad magic {magic!r}", source=path)
    try:
        spec = GridSpec(s, nb, nc, fw, fh)
    except InvariantViolation as exc:
        raise ParseError(str(exc), source=path) from None
    n_vals = s * s * nb * (5 + nc)
    expected = _HEADER.size + 4 * (2 * nb + n_vals)
    if len(raw) != expected:
        raise ParseError(f"expected {expected} bytes, found {len(raw)}", source=path)
    floats = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    anchors = [Anchor(float(w), float(h)) for w, h in floats[: 2 * nb].reshape(nb, 2)]
    return RawGridTensor(spec, anchors, floats[2 * nb :].reshape(spec.shape))
